#include "rsoc/jets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rsoc {

// ---------------------------------------------------------------------------
// ValueFunction
// ---------------------------------------------------------------------------

ValueFunction ValueFunction::from_grid(std::shared_ptr<const ValueGrid> grid) {
    if (!grid) throw std::invalid_argument("null value grid");
    ValueFunction vf;
    vf.grid_ = grid;
    auto g = grid.get();
    vf.eval_ = [g](double t, double x) { return eval_value(*g, t, x); };
    vf.closed_ = false;
    vf.smooth_ = false;
    vf.provenance_ = "grid";
    vf.min_radius_ = 2.0 * grid->dx();
    vf.t_hi_ = grid->T;
    vf.x_lo_ = grid->x_nodes[0];
    vf.x_hi_ = grid->x_nodes[grid->x_nodes.size() - 1];
    return vf;
}

ValueFunction ValueFunction::from_example(const ControlProblem& problem) {
    if (!problem.aux || !problem.aux->V)
        throw std::invalid_argument("problem '" + problem.label +
                                    "' has no registered closed-form value function");
    ValueFunction vf;
    auto aux = problem.aux;
    vf.eval_ = aux->V;
    vf.vt_ = aux->V_t;
    vf.vx_ = aux->V_x;
    vf.vxx_ = aux->V_xx;
    vf.closed_ = true;
    vf.smooth_ = aux->value_smooth;
    vf.provenance_ = "closed-form";
    vf.min_radius_ = 1e-6;
    vf.t_hi_ = problem.T;
    vf.x_lo_ = -1e30;
    vf.x_hi_ = 1e30;
    return vf;
}

// ---------------------------------------------------------------------------
// Jet estimation
// ---------------------------------------------------------------------------

namespace {

struct SlopeFit {
    double limit = 0.0;    // extrapolated h -> 0 value
    double residual = 0.0;  // rms misfit of the linear model
};

// Least-squares fit q(h) = limit + c*h over the finest radii.
SlopeFit fit_limit(const std::vector<double>& h, const std::vector<double>& q) {
    int n = static_cast<int>(h.size());
    int use = std::min(4, n);
    int off = n - use;
    if (use == 1) return {q.back(), 0.0};
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int k = off; k < n; ++k) {
        sx += h[k];
        sy += q[k];
        sxx += h[k] * h[k];
        sxy += h[k] * q[k];
    }
    double denom = use * sxx - sx * sx;
    double c = (use * sxy - sx * sy) / denom;
    double limit = (sy - c * sx) / use;
    double rss = 0;
    for (int k = off; k < n; ++k) {
        double e = q[k] - (limit + c * h[k]);
        rss += e * e;
    }
    return {limit, std::sqrt(rss / use)};
}

}  // namespace

SpatialJetEstimate estimate_spatial_jets(const ValueFunction& V, double t, double x,
                                         const JetSchedule& schedule) {
    SpatialJetEstimate est;
    std::vector<double> radii;
    for (double h : schedule.radii()) {
        if (h < V.min_radius()) continue;
        if (x + h > V.x_hi() || x - h < V.x_lo()) continue;
        radii.push_back(h);
    }
    if (radii.size() < 3) {
        est.widened_tolerance = true;
        for (double h : schedule.radii())
            if (x + h <= V.x_hi() && x - h >= V.x_lo()) radii.push_back(h);
        if (radii.size() < 3) throw std::invalid_argument("jet schedule has no usable radii");
    }
    est.radii_used = radii;

    const double v0 = V(t, x);
    const int n = static_cast<int>(radii.size());
    std::vector<double> right(n), left(n), dplus(n), dminus(n);
    for (int k = 0; k < n; ++k) {
        double h = radii[k];
        dplus[k] = V(t, x + h) - v0;
        dminus[k] = V(t, x - h) - v0;
        right[k] = dplus[k] / h;
        left[k] = -dminus[k] / h;
    }

    SlopeFit rf = fit_limit(radii, right);
    SlopeFit lf = fit_limit(radii, left);
    double fit_tol = std::max(1e-9, 4.0 * std::max(rf.residual, lf.residual));
    if (est.widened_tolerance) fit_tol = std::max(fit_tol, 1e-4);
    est.fit_tolerance = fit_tol;

    // Super-jet first components live between the right and left slopes
    // (nonempty at concave kinks), the sub-jet between left and right.
    est.super_empty = lf.limit < rf.limit - fit_tol;
    est.p_super_lo = est.super_empty ? rf.limit : std::min(rf.limit, lf.limit);
    est.p_super_hi = est.super_empty ? lf.limit : std::max(rf.limit, lf.limit);
    est.sub_empty = rf.limit < lf.limit - fit_tol;
    est.p_sub_lo = est.sub_empty ? lf.limit : std::min(rf.limit, lf.limit);
    est.p_sub_hi = est.sub_empty ? rf.limit : std::max(rf.limit, lf.limit);

    const double eps_abs = (V.closed_form() ? 1e-12 : 1e-10) * (1.0 + std::abs(v0));

    // Envelope fit A(h) ~ alpha/2 h^2 + c h^{2.5} across the schedule; the
    // h^{2.5} term absorbs the one-sided cubic Taylor error so the quadratic
    // threshold is read off cleanly.
    auto envelope_c = [&](const std::vector<double>& A) {
        int off = 0;
        double m00 = 0, m01 = 0, m11 = 0, b0 = 0, b1 = 0;
        for (int k = off; k < n; ++k) {
            double f0 = 0.5 * radii[k] * radii[k];
            double f1 = std::pow(radii[k], 2.5);
            m00 += f0 * f0;
            m01 += f0 * f1;
            m11 += f1 * f1;
            b0 += f0 * A[k];
            b1 += f1 * A[k];
        }
        double det = m00 * m11 - m01 * m01;
        if (std::abs(det) < 1e-300) return 0.0;
        double c = (m00 * b1 - m01 * b0) / det;
        return std::max(0.0, c);
    };

    // Super threshold: smallest P with V(x +- h) - V(x) - p(+-h) <= P h^2/2 + eps(h),
    // p at the binding interval endpoint per side.
    {
        std::vector<double> A(n);
        for (int k = 0; k < n; ++k)
            A[k] = std::max(dplus[k] - est.p_super_lo * radii[k],
                            dminus[k] + est.p_super_hi * radii[k]);
        double c = envelope_c(A);
        double thr = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < n; ++k) {
            double eps = c * std::pow(radii[k], 2.5) + eps_abs;
            thr = std::max(thr, 2.0 * (A[k] - eps) / (radii[k] * radii[k]));
        }
        est.P_threshold_super = thr;
    }

    // Sub threshold: largest P with V(x +- h) - V(x) - p(+-h) >= P h^2/2 - eps(h).
    {
        std::vector<double> B(n), Babs(n);
        for (int k = 0; k < n; ++k) {
            B[k] = std::min(dplus[k] - est.p_sub_hi * radii[k],
                            dminus[k] + est.p_sub_lo * radii[k]);
            Babs[k] = std::abs(B[k]);
        }
        double c = envelope_c(Babs);
        double thr = std::numeric_limits<double>::infinity();
        for (int k = 0; k < n; ++k) {
            double eps = c * std::pow(radii[k], 2.5) + eps_abs;
            thr = std::min(thr, 2.0 * (B[k] + eps) / (radii[k] * radii[k]));
        }
        est.P_threshold_sub = thr;
    }
    return est;
}

TimeJetEstimate estimate_time_jets(const ValueFunction& V, double t, double x,
                                   const JetSchedule& schedule) {
    TimeJetEstimate est;
    std::vector<double> radii;
    for (double h : schedule.radii())
        if (t + h <= V.t_hi() + 1e-15) radii.push_back(h);
    if (radii.size() < 2) {
        est.widened_tolerance = true;
        radii.clear();
        double h = std::max(1e-9, (V.t_hi() - t)) / 2.0;
        for (int k = 0; k <= schedule.K && h >= 1e-9; ++k, h *= 0.5) radii.push_back(h);
        if (radii.size() < 2) throw std::invalid_argument("no usable forward time radii at t");
    }
    const double v0 = V(t, x);
    std::vector<double> q(radii.size());
    for (std::size_t k = 0; k < radii.size(); ++k) q[k] = (V(t + radii[k], x) - v0) / radii[k];
    SlopeFit f = fit_limit(radii, q);
    est.fitted_slope = f.limit;
    est.upper_dini = f.limit + f.residual;
    est.lower_dini = f.limit - f.residual;
    return est;
}

Membership test_membership(const SpatialJetEstimate& est, double p, double P, double tol,
                           JetSide side) {
    double lo, hi, thr;
    bool empty;
    bool super = side == JetSide::Super;
    if (super) {
        lo = est.p_super_lo;
        hi = est.p_super_hi;
        thr = est.P_threshold_super;
        empty = est.super_empty;
    } else {
        lo = est.p_sub_lo;
        hi = est.p_sub_hi;
        thr = est.P_threshold_sub;
        empty = est.sub_empty;
    }
    if (empty) return Membership::Outside;
    double band = 2.0 * tol;
    bool p_out = p < lo - band || p > hi + band;
    bool P_out = super ? (P < thr - band) : (P > thr + band);
    if (p_out || P_out) return Membership::Outside;
    bool p_edge = std::abs(p - lo) <= band || std::abs(p - hi) <= band;
    bool P_edge = std::abs(P - thr) <= band;
    if (p_edge || P_edge) return Membership::Boundary;
    return Membership::Inside;
}

}  // namespace rsoc
