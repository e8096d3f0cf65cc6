#include "rsoc/hjb.hpp"

#include "rsoc/examples.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rsoc {

namespace {

using Eigen::ArrayXd;
using BoolArray = Eigen::Array<bool, Eigen::Dynamic, 1>;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ControlInterval {
    double lo, hi, h;
    int m;  // number of subintervals; grid points lo + j*h, j = 0..m (hi exact at j = m)
};

std::vector<ControlInterval> control_intervals(const IntervalUnion& U, double step) {
    std::vector<ControlInterval> out;
    for (const auto& [lo, hi] : U.intervals) {
        ControlInterval ci;
        ci.lo = lo;
        ci.hi = hi;
        ci.m = hi > lo ? std::max(1, static_cast<int>(std::lround((hi - lo) / step))) : 0;
        ci.h = ci.m > 0 ? (hi - lo) / ci.m : 1.0;
        out.push_back(ci);
    }
    return out;
}

double snap_down(const ControlInterval& ci, double u) {
    if (ci.m == 0) return ci.lo;
    double j = std::floor((u - ci.lo) / ci.h);
    j = std::min(std::max(j, 0.0), static_cast<double>(ci.m));
    return std::min(ci.lo + j * ci.h, ci.hi);
}

/// One-sided and central differences of a row, with linear-extrapolation
/// ghosts (zero curvature, matched slope) at both ends.
struct Stencil {
    ArrayXd Df, Db, D2;
    void compute(const ArrayXd& v, double dx) {
        const auto n = v.size();
        Df.resize(n);
        Db.resize(n);
        D2.resize(n);
        Df.head(n - 1) = (v.tail(n - 1) - v.head(n - 1)) / dx;
        Db.tail(n - 1) = Df.head(n - 1);
        Df[n - 1] = Db[n - 1];
        Db[0] = Df[0];
        D2.setZero();
        D2.segment(1, n - 2) =
            (v.tail(n - 2) - 2.0 * v.segment(1, n - 2) + v.head(n - 2)) / (dx * dx);
    }
};

// ---------------------------------------------------------------------------
// Generic control sup: full scan of the discretized control set.
// ---------------------------------------------------------------------------

class FullScanSup {
public:
    FullScanSup(const ControlProblem& problem, const ArrayXd& x, double control_step)
        : problem_(problem), x_(x) {
        for (const auto& ci : control_intervals(problem.controls, control_step))
            for (int j = 0; j <= ci.m; ++j)
                u_grid_.push_back(j == ci.m ? ci.hi : ci.lo + j * ci.h);
    }

    void sup(double t, const ArrayXd& v, const Stencil& st, ArrayXd& out) const {
        const auto& c = problem_.coeffs;
        const auto n = x_.size();
        out.setConstant(n, -kInf);
        for (double u : u_grid_) {
            for (Eigen::Index i = 0; i < n; ++i) {
                double x = x_[i];
                double r = -v[i];
                double sig = c.sigma(t, x, u);
                double b = c.b(t, x, u);
                double zc = -sig * 0.5 * (st.Df[i] + st.Db[i]);
                double deff = b + c.f_z(t, x, r, zc, u) * sig;
                double dsel = deff >= 0.0 ? st.Df[i] : st.Db[i];
                double g = -0.5 * sig * sig * st.D2[i] - b * dsel + c.f(t, x, r, -sig * dsel, u);
                if (g > out[i]) out[i] = g;
            }
        }
    }

    const std::vector<double>& grid() const { return u_grid_; }

private:
    const ControlProblem& problem_;
    ArrayXd x_;
    std::vector<double> u_grid_;
};

// ---------------------------------------------------------------------------
// Fast control sup: exact discrete sup via piecewise-quadratic structure.
// Requires (probed at setup): time-independent coefficients, f independent of
// y and linear in z, and sigma^2, b + f_z*sigma, f(.,0,0,.) quadratic in u.
// ---------------------------------------------------------------------------

class FastQuadSup {
public:
    // Quadratic monomial coefficient arrays over the nodes.
    struct Quad {
        ArrayXd c0, c1, c2;
        ArrayXd at(double u) const { return (c2 * u + c1) * u + c0; }
        ArrayXd at(const ArrayXd& u) const { return (c2 * u + c1) * u + c0; }
    };

    bool setup(const ControlProblem& problem, const ArrayXd& x, double control_step,
               const FullScanSup& reference) {
        const auto& c = problem.coeffs;
        const auto n = x.size();
        intervals_ = control_intervals(problem.controls, control_step);

        const double t0 = problem.t0, T = problem.T;
        double ulo = problem.controls.lo(), uhi = problem.controls.hi();
        double ua = ulo, ub = 0.5 * (ulo + uhi), uc = uhi;
        if (ub == ua || ub == uc) ub = ua + 1.0;

        // Structure probes on a scalar sample set.
        auto rel_ok = [](double a, double b) {
            return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
        };
        std::vector<double> xs;
        for (int k = 0; k < 9; ++k) xs.push_back(x[(n - 1) * k / 8]);
        std::vector<double> us = {ua, ub, uc, 0.25 * ua + 0.75 * uc, 0.6 * ua + 0.4 * uc};
        for (double xp : xs) {
            for (double up : us) {
                for (double tp : {0.5 * (t0 + T), T}) {
                    if (!rel_ok(c.sigma(t0, xp, up), c.sigma(tp, xp, up))) return false;
                    if (!rel_ok(c.b(t0, xp, up), c.b(tp, xp, up))) return false;
                    if (!rel_ok(c.f(t0, xp, 0.3, 0.7, up), c.f(tp, xp, 0.3, 0.7, up))) return false;
                }
                if (!rel_ok(c.f(t0, xp, -1.0, 0.4, up), c.f(t0, xp, 0.8, 0.4, up))) return false;
                double f0 = c.f(t0, xp, 0.0, 0.0, up);
                double fm = c.f(t0, xp, 0.0, -1.0, up);
                double fp = c.f(t0, xp, 0.0, 1.0, up);
                double f2 = c.f(t0, xp, 0.0, 2.0, up);
                double scale = std::max({1.0, std::abs(f0), std::abs(fp)});
                if (std::abs(fm + fp - 2.0 * f0) > 1e-9 * scale) return false;
                if (std::abs(f2 - 2.0 * fp + f0) > 1e-9 * scale) return false;
            }
        }

        // Node arrays at the three base controls.
        auto fill = [&](double u, ArrayXd& hs2, ArrayXd& deff, ArrayXd& f0) {
            hs2.resize(n);
            deff.resize(n);
            f0.resize(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                double sig = c.sigma(t0, x[i], u);
                double b = c.b(t0, x[i], u);
                double fz = c.f_z(t0, x[i], 0.0, 0.0, u);
                hs2[i] = 0.5 * sig * sig;
                deff[i] = b + fz * sig;
                f0[i] = c.f(t0, x[i], 0.0, 0.0, u);
            }
        };
        ArrayXd hs2a, hs2b, hs2c, da, db_, dc, fa, fb, fc;
        fill(ua, hs2a, da, fa);
        fill(ub, hs2b, db_, fb);
        fill(uc, hs2c, dc, fc);
        s_ = to_quad(ua, ub, uc, hs2a, hs2b, hs2c);
        d_ = to_quad(ua, ub, uc, da, db_, dc);
        g_ = to_quad(ua, ub, uc, fa, fb, fc);

        // Quadratic-in-u probe: predictions must match direct evaluation.
        for (double xp : xs) {
            Eigen::Index i = 0;
            double best = kInf;
            for (Eigen::Index k = 0; k < n; ++k)
                if (std::abs(x[k] - xp) < best) { best = std::abs(x[k] - xp); i = k; }
            for (double up : us) {
                double sig = c.sigma(t0, x[i], up);
                double b = c.b(t0, x[i], up);
                double fz = c.f_z(t0, x[i], 0.0, 0.0, up);
                if (!rel_ok((s_.c2[i] * up + s_.c1[i]) * up + s_.c0[i], 0.5 * sig * sig))
                    return false;
                if (!rel_ok((d_.c2[i] * up + d_.c1[i]) * up + d_.c0[i], b + fz * sig)) return false;
                if (!rel_ok((g_.c2[i] * up + g_.c1[i]) * up + g_.c0[i],
                            c.f(t0, x[i], 0.0, 0.0, up)))
                    return false;
            }
        }

        build_static_candidates(n);

        // End-to-end validation against the reference scan on the terminal row.
        ArrayXd vterm(n);
        for (Eigen::Index i = 0; i < n; ++i) vterm[i] = -c.phi(x[i]);
        Stencil st;
        st.compute(vterm, x.size() > 1 ? x[1] - x[0] : 1.0);
        ArrayXd fast, slow;
        sup(vterm, st, fast);
        reference.sup(problem.T, vterm, st, slow);
        for (Eigen::Index i = 0; i < n; ++i)
            if (std::abs(fast[i] - slow[i]) > 1e-9 * std::max(1.0, std::abs(slow[i])))
                return false;
        return true;
    }

    void sup(const ArrayXd& v, const Stencil& st, ArrayXd& out) const {
        const auto n = v.size();
        ArrayXd af0 = g_.c0 - s_.c0 * st.D2 - d_.c0 * st.Df;
        ArrayXd af1 = g_.c1 - s_.c1 * st.D2 - d_.c1 * st.Df;
        ArrayXd af2 = g_.c2 - s_.c2 * st.D2 - d_.c2 * st.Df;
        ArrayXd ab0 = g_.c0 - s_.c0 * st.D2 - d_.c0 * st.Db;
        ArrayXd ab1 = g_.c1 - s_.c1 * st.D2 - d_.c1 * st.Db;
        ArrayXd ab2 = g_.c2 - s_.c2 * st.D2 - d_.c2 * st.Db;

        out.setConstant(n, -kInf);
        auto eval_scalar_u = [&](double u, const BoolArray& fwd) {
            ArrayXd hf = (af2 * u + af1) * u + af0;
            ArrayXd hb = (ab2 * u + ab1) * u + ab0;
            out = out.max(fwd.select(hf, hb));
        };
        auto eval_array_u = [&](const ArrayXd& u, const BoolArray& fwd) {
            ArrayXd hf = (af2 * u + af1) * u + af0;
            ArrayXd hb = (ab2 * u + ab1) * u + ab0;
            out = out.max(fwd.select(hf, hb));
        };

        for (const auto& cand : scalar_candidates_) eval_scalar_u(cand.u, cand.fwd);
        for (const auto& cand : array_candidates_) eval_array_u(cand.u, cand.fwd);

        // Interior vertices of both quadratics, snapped to the control grid.
        for (int side = 0; side < 2; ++side) {
            const ArrayXd& a2 = side == 0 ? af2 : ab2;
            const ArrayXd& a1 = side == 0 ? af1 : ab1;
            ArrayXd vert(n);
            for (Eigen::Index i = 0; i < n; ++i)
                vert[i] = a2[i] < -1e-300 ? -a1[i] / (2.0 * a2[i]) : intervals_.front().lo;
            for (const auto& ci : intervals_) {
                ArrayXd u1(n), u2(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    double uc = std::min(std::max(vert[i], ci.lo), ci.hi);
                    double lo = snap_down(ci, uc);
                    u1[i] = lo;
                    u2[i] = std::min(lo + ci.h, ci.hi);
                }
                BoolArray fwd1 = (d_.at(u1) >= 0.0).eval();
                BoolArray fwd2 = (d_.at(u2) >= 0.0).eval();
                eval_array_u(u1, fwd1);
                eval_array_u(u2, fwd2);
            }
        }
    }

private:
    static Quad to_quad(double a, double b, double c, const ArrayXd& va, const ArrayXd& vb,
                        const ArrayXd& vc) {
        // Newton divided differences expanded to monomial form.
        ArrayXd d1 = (vb - va) / (b - a);
        ArrayXd d2 = ((vc - vb) / (c - b) - d1) / (c - a);
        Quad q;
        q.c2 = d2;
        q.c1 = d1 - d2 * (a + b);
        q.c0 = va - a * d1 + d2 * (a * b);
        return q;
    }

    void build_static_candidates(Eigen::Index n) {
        scalar_candidates_.clear();
        array_candidates_.clear();
        for (const auto& ci : intervals_) {
            for (double u : {ci.lo, ci.hi}) {
                ScalarCandidate sc;
                sc.u = u;
                sc.fwd = (d_.at(u) >= 0.0).eval();
                scalar_candidates_.push_back(std::move(sc));
                if (ci.hi == ci.lo) break;
            }
        }
        // Effective-drift sign changes: roots of the static quadratic d(u).
        for (int which = 0; which < 2; ++which) {
            ArrayXd root(n);
            bool any = false;
            for (Eigen::Index i = 0; i < n; ++i) {
                double a = d_.c2[i], b = d_.c1[i], c = d_.c0[i];
                double r = intervals_.front().lo;
                if (std::abs(a) > 1e-13) {
                    double disc = b * b - 4.0 * a * c;
                    if (disc >= 0.0) {
                        double sq = std::sqrt(disc);
                        r = which == 0 ? (-b - sq) / (2.0 * a) : (-b + sq) / (2.0 * a);
                        any = true;
                    }
                } else if (which == 0 && std::abs(b) > 1e-13) {
                    r = -c / b;
                    any = true;
                }
                root[i] = r;
            }
            if (!any) continue;
            for (const auto& ci : intervals_) {
                ArrayCandidate c1, c2;
                c1.u.resize(n);
                c2.u.resize(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    double uc = std::min(std::max(root[i], ci.lo), ci.hi);
                    double lo = snap_down(ci, uc);
                    c1.u[i] = lo;
                    c2.u[i] = std::min(lo + ci.h, ci.hi);
                }
                c1.fwd = (d_.at(c1.u) >= 0.0).eval();
                c2.fwd = (d_.at(c2.u) >= 0.0).eval();
                array_candidates_.push_back(std::move(c1));
                array_candidates_.push_back(std::move(c2));
            }
        }
    }

    struct ScalarCandidate {
        double u;
        BoolArray fwd;
    };
    struct ArrayCandidate {
        ArrayXd u;
        BoolArray fwd;
    };

    Quad s_, d_, g_;
    std::vector<ControlInterval> intervals_;
    std::vector<ScalarCandidate> scalar_candidates_;
    std::vector<ArrayCandidate> array_candidates_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

ValueGrid solve_hjb(const ControlProblem& problem, const GridSpec& spec) {
    problem.validate();
    if (problem.n != 1) throw std::invalid_argument("HJB solver requires n = 1");
    if (!(spec.x_lo < spec.x_hi) || !(spec.dx > 0))
        throw std::invalid_argument("bad spatial grid spec");
    if (spec.store_times < 2) throw std::invalid_argument("store_times must be >= 2");
    if (spec.boundary == BoundaryPolicy::DirichletClosedForm && !(problem.aux && problem.aux->V))
        throw std::invalid_argument("Dirichlet boundary needs a registered closed-form value");

    const auto& c = problem.coeffs;
    const int I = std::max(1, static_cast<int>(std::lround((spec.x_hi - spec.x_lo) / spec.dx)));
    const double dx = (spec.x_hi - spec.x_lo) / I;
    ArrayXd x(I + 1);
    for (int i = 0; i <= I; ++i) x[i] = i == I ? spec.x_hi : spec.x_lo + i * dx;

    FullScanSup scan(problem, x, spec.control_grid_step);

    // Stability bound of the explicit sweep (recorded; refusal gate for a
    // user-provided dt) and the pointwise positive-coefficient bound used to
    // auto-select dt.
    double max_sig2 = 0, max_b = 0, max_fy = 0, max_point = 0;
    for (double u : scan.grid()) {
        for (int i = 0; i <= I; ++i) {
            double sig = c.sigma(problem.t0, x[i], u);
            double b = c.b(problem.t0, x[i], u);
            double fy = std::abs(c.f_y(problem.t0, x[i], 0.0, 0.0, u));
            double fz = c.f_z(problem.t0, x[i], 0.0, 0.0, u);
            max_sig2 = std::max(max_sig2, sig * sig);
            max_b = std::max(max_b, std::abs(b));
            max_fy = std::max(max_fy, fy);
            max_point = std::max(max_point, sig * sig + dx * std::abs(b + fz * sig) + dx * dx * fy);
        }
    }
    const double spec_bound = dx * dx / std::max(1e-300, max_sig2 + dx * max_b + dx * dx * max_fy);
    const double exact_bound = dx * dx / std::max(1e-300, max_point);

    double dt_used;
    long steps;
    if (spec.dt > 0) {
        if (spec.dt > spec_bound * (1.0 + 1e-12)) throw StabilityError(spec_bound, spec.dt);
        steps = std::max(1L, std::lround(std::ceil((problem.T - problem.t0) / spec.dt)));
        dt_used = (problem.T - problem.t0) / steps;
    } else {
        double dt0 = 0.9 * std::min(spec_bound, exact_bound);
        steps = std::max(1L, std::lround(std::ceil((problem.T - problem.t0) / dt0)));
        dt_used = (problem.T - problem.t0) / steps;
    }

    auto fast = std::make_unique<FastQuadSup>();
    const bool use_fast =
        !spec.force_full_scan && fast->setup(problem, x, spec.control_grid_step, scan);

    // Snapshot plan: store_times rows uniform in step index, t0 and T always.
    const int store = static_cast<int>(std::min<long>(spec.store_times, steps + 1));
    std::vector<long> snap_steps;
    for (int k = 0; k < store; ++k) {
        long j = std::lround(static_cast<double>(k) * steps / (store - 1));
        if (snap_steps.empty() || snap_steps.back() != j) snap_steps.push_back(j);
    }

    ValueGrid grid;
    grid.spec = spec;
    grid.spec.dx = dx;
    grid.t0 = problem.t0;
    grid.T = problem.T;
    grid.x_nodes = x.matrix();
    grid.t_nodes.resize(snap_steps.size());
    grid.v.resize(snap_steps.size(), I + 1);
    grid.stability = {spec_bound, dt_used, steps, use_fast};
    for (std::size_t r = 0; r < snap_steps.size(); ++r)
        grid.t_nodes[r] = snap_steps[r] == steps
                              ? problem.T
                              : problem.t0 + snap_steps[r] * dt_used;

    ArrayXd v(I + 1);
    for (int i = 0; i <= I; ++i) v[i] = -c.phi(x[i]);
    grid.v.row(snap_steps.size() - 1) = v.matrix().transpose();

    Stencil st;
    ArrayXd supg, vnew;
    long next_snap = static_cast<long>(snap_steps.size()) - 2;
    for (long j = steps; j >= 1; --j) {
        const double t_here = problem.t0 + j * dt_used;
        st.compute(v, dx);
        if (use_fast)
            fast->sup(v, st, supg);
        else
            scan.sup(t_here, v, st, supg);
        vnew = v - dt_used * supg;
        if (spec.boundary == BoundaryPolicy::DirichletClosedForm) {
            vnew[0] = problem.aux->V(t_here - dt_used, x[0]);
            vnew[I] = problem.aux->V(t_here - dt_used, x[I]);
        }
        if (!vnew.allFinite()) {
            Eigen::Index bad = 0;
            for (Eigen::Index i = 0; i <= I; ++i)
                if (!std::isfinite(vnew[i])) { bad = i; break; }
            std::ostringstream os;
            os << "non-finite value during sweep at t = " << (t_here - dt_used)
               << ", x = " << x[bad];
            throw std::runtime_error(os.str());
        }
        v.swap(vnew);
        if (next_snap >= 0 && snap_steps[next_snap] == j - 1) {
            grid.v.row(next_snap) = v.matrix().transpose();
            --next_snap;
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

namespace {

// Index of the last node <= q (clamped to [0, size-2]).
Eigen::Index bracket(const Eigen::VectorXd& nodes, double q) {
    Eigen::Index lo = 0, hi = nodes.size() - 1;
    if (q <= nodes[0]) return 0;
    if (q >= nodes[hi]) return hi - 1;
    while (hi - lo > 1) {
        Eigen::Index mid = (lo + hi) / 2;
        (nodes[mid] <= q ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace

double eval_value(const ValueGrid& grid, double t, double x, bool* extrapolated) {
    bool outside = t < grid.t_nodes[0] || t > grid.t_nodes[grid.t_nodes.size() - 1] ||
                   x < grid.x_nodes[0] || x > grid.x_nodes[grid.x_nodes.size() - 1];
    if (extrapolated) *extrapolated = outside;

    Eigen::Index r = bracket(grid.t_nodes, t);
    Eigen::Index i = bracket(grid.x_nodes, x);
    double tw = (t - grid.t_nodes[r]) / (grid.t_nodes[r + 1] - grid.t_nodes[r]);
    double xw = (x - grid.x_nodes[i]) / (grid.x_nodes[i + 1] - grid.x_nodes[i]);
    tw = std::min(std::max(tw, outside ? tw : 0.0), outside ? tw : 1.0);
    double v00 = grid.v(r, i), v01 = grid.v(r, i + 1);
    double v10 = grid.v(r + 1, i), v11 = grid.v(r + 1, i + 1);
    // Bilinear form; linear extrapolation falls out of the same weights.
    return (1 - tw) * ((1 - xw) * v00 + xw * v01) + tw * ((1 - xw) * v10 + xw * v11);
}

DerivativeEstimate estimate_derivatives(const ValueGrid& grid, double t, double x) {
    const auto& xn = grid.x_nodes;
    const double dx = grid.dx();
    DerivativeEstimate est;

    Eigen::Index i = bracket(xn, x);
    if (std::abs(xn[i + 1] - x) < std::abs(xn[i] - x)) ++i;
    if (i == 0) {
        i = 1;
        est.widened_stencil = true;
    }
    if (i == xn.size() - 1) {
        i = xn.size() - 2;
        est.widened_stencil = true;
    }

    Eigen::Index r = bracket(grid.t_nodes, t);
    double tw = (t - grid.t_nodes[r]) / (grid.t_nodes[r + 1] - grid.t_nodes[r]);
    tw = std::min(std::max(tw, 0.0), 1.0);
    auto row_at = [&](Eigen::Index col) {
        return (1 - tw) * grid.v(r, col) + tw * grid.v(r + 1, col);
    };
    double vm = row_at(i - 1), v0 = row_at(i), vp = row_at(i + 1);
    est.v = v0;
    est.v_x_left = (v0 - vm) / dx;
    est.v_x_right = (vp - v0) / dx;
    est.v_xx = (vp - 2 * v0 + vm) / (dx * dx);
    return est;
}

RegularityReport regularity_report(const ValueGrid& grid) {
    RegularityReport rep;
    const double dx = grid.dx();
    for (Eigen::Index r = 0; r < grid.v.rows(); ++r) {
        for (Eigen::Index i = 0; i < grid.v.cols(); ++i) {
            rep.growth_const =
                std::max(rep.growth_const, std::abs(grid.v(r, i)) / (1.0 + std::abs(grid.x_nodes[i])));
            if (i + 1 < grid.v.cols())
                rep.lipschitz_const = std::max(
                    rep.lipschitz_const, std::abs(grid.v(r, i + 1) - grid.v(r, i)) / dx);
        }
    }
    return rep;
}

std::vector<double> argmax_G(const ControlProblem& problem, const ValueGrid& grid, double t,
                             double x, double value_tol) {
    DerivativeEstimate d = estimate_derivatives(grid, t, x);
    double vx = 0.5 * (d.v_x_left + d.v_x_right);
    std::vector<double> us = problem.controls.grid(grid.spec.control_grid_step);
    std::vector<double> gs(us.size());
    double best = -kInf;
    for (std::size_t k = 0; k < us.size(); ++k) {
        gs[k] = eval_G(problem, t, x, -d.v, -vx, -d.v_xx, us[k]);
        best = std::max(best, gs[k]);
    }
    double tol = value_tol * std::max(1.0, std::abs(best));
    std::vector<double> out;
    for (std::size_t k = 0; k < us.size(); ++k)
        if (gs[k] >= best - tol) out.push_back(us[k]);
    return out;
}

}  // namespace rsoc
