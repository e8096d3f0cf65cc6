#include "rsoc/bsde.hpp"

#include <Eigen/QR>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rsoc {

namespace {

using Eigen::ArrayXd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<int> active_indices(const PathBundle& paths) {
    std::vector<int> idx;
    idx.reserve(paths.paths());
    for (int m = 0; m < paths.paths(); ++m)
        if (!paths.failed[m]) idx.push_back(m);
    return idx;
}

/// Least-squares fit of target against {1, xn, .., xn^d}, evaluated back at
/// the samples. Optional per-sample weights handle heteroscedastic targets
/// (conditional noise scaling with the local diffusion). Degrades the degree
/// on rank deficiency.
class ConditionalFitter {
public:
    ConditionalFitter(const RegressionBasis& basis, std::vector<std::string>* warnings)
        : basis_(basis), warnings_(warnings) {}

    VectorXd fit(const VectorXd& state, const VectorXd& target, const VectorXd* weights,
                 double* residual_rms = nullptr) {
        const auto n = state.size();
        if (n == 0) return VectorXd();
        if (!basis_.localize_sign_x) return fit_block(state, target, weights, residual_rms);

        std::vector<int> neg, pos;
        for (Eigen::Index k = 0; k < n; ++k) (state[k] < 0 ? neg : pos).push_back(static_cast<int>(k));
        int cols = basis_.degree + 1;
        if (static_cast<int>(neg.size()) < cols + 4 || static_cast<int>(pos.size()) < cols + 4)
            return fit_block(state, target, weights, residual_rms);

        VectorXd out(n);
        double r1 = 0, r2 = 0;
        fit_subset(state, target, weights, neg, out, &r1);
        fit_subset(state, target, weights, pos, out, &r2);
        if (residual_rms) *residual_rms = std::max(r1, r2);
        return out;
    }

private:
    RegressionBasis basis_;
    std::vector<std::string>* warnings_;

    void fit_subset(const VectorXd& state, const VectorXd& target, const VectorXd* weights,
                    const std::vector<int>& rows, VectorXd& out, double* residual_rms) {
        VectorXd s(rows.size()), y(rows.size());
        VectorXd w;
        if (weights) w.resize(rows.size());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            s[k] = state[rows[k]];
            y[k] = target[rows[k]];
            if (weights) w[k] = (*weights)[rows[k]];
        }
        VectorXd fitted = fit_block(s, y, weights ? &w : nullptr, residual_rms);
        for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = fitted[k];
    }

    VectorXd fit_block(const VectorXd& state, const VectorXd& target, const VectorXd* weights,
                       double* residual_rms) {
        const auto n = state.size();
        double mean = state.mean();
        double sd = std::sqrt((state.array() - mean).square().sum() / std::max<Eigen::Index>(1, n - 1));
        int deg = sd > 1e-13 ? basis_.degree : 0;

        ArrayXd sqw = ArrayXd::Ones(n);
        if (weights) sqw = weights->array().sqrt();

        for (;;) {
            int cols = deg + 1;
            MatrixXd X(n, cols);
            ArrayXd xn = ArrayXd::Zero(n);
            // Winsorized coordinate: keeps the leverage of far-tail paths
            // bounded so they cannot self-fit their own noise.
            if (sd > 1e-13) xn = ((state.array() - mean) / sd).cwiseMin(4.0).cwiseMax(-4.0);
            ArrayXd power = ArrayXd::Ones(n);
            for (int j = 0; j <= deg; ++j) {
                X.col(j) = (power * sqw).matrix();
                power *= xn;
            }
            Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
            qr.setThreshold(1e-10);
            if (qr.rank() < cols && deg > 0) {
                --deg;
                if (warnings_)
                    warnings_->push_back("rank-deficient design matrix; degree lowered to " +
                                         std::to_string(deg));
                continue;
            }
            VectorXd coef = qr.solve((target.array() * sqw).matrix());
            // Evaluate the fitted polynomial on the unweighted basis.
            VectorXd fitted = VectorXd::Zero(n);
            ArrayXd pw = ArrayXd::Ones(n);
            for (int j = 0; j <= deg; ++j) {
                fitted.array() += coef[j] * pw;
                pw *= xn;
            }
            if (residual_rms) {
                double rss = ((target - fitted).array() * sqw).matrix().squaredNorm() /
                             std::max(1e-300, sqw.square().mean());
                *residual_rms = std::sqrt(rss / n) * std::sqrt(double(cols) / n);
            }
            return fitted;
        }
    }
};

/// Derivative columns along the trajectory cross-section at step i, with the
/// driver arguments (t_i, X_i, Ybar_i, Zbar_i, u_i).
struct DerivColumns {
    ArrayXd bx, sx, fx, fy, fz;
    ArrayXd bxx, sxx;
    std::vector<Eigen::Matrix3d> d2f;
};

DerivColumns eval_derivatives(const ControlProblem& problem, const PathBundle& paths,
                              const BsdeSolution& cost, int i, bool second_order) {
    const auto& c = problem.coeffs;
    const int M = paths.paths();
    const double t = paths.grid.node(i);
    DerivColumns d;
    d.bx.resize(M); d.sx.resize(M); d.fx.resize(M); d.fy.resize(M); d.fz.resize(M);
    if (second_order) {
        d.bxx.resize(M); d.sxx.resize(M); d.d2f.resize(M);
    }
    for (int m = 0; m < M; ++m) {
        if (paths.failed[m]) {
            d.bx[m] = d.sx[m] = d.fx[m] = d.fy[m] = d.fz[m] = 0;
            if (second_order) { d.bxx[m] = d.sxx[m] = 0; d.d2f[m].setZero(); }
            continue;
        }
        double x = paths.X(m, i), u = paths.U(m, i);
        double y = cost.Y(m, i), z = cost.Z(m, i);
        d.bx[m] = c.b_x(t, x, u);
        d.sx[m] = c.sigma_x(t, x, u);
        d.fx[m] = c.f_x(t, x, y, z, u);
        d.fy[m] = c.f_y(t, x, y, z, u);
        d.fz[m] = c.f_z(t, x, y, z, u);
        if (second_order) {
            d.bxx[m] = c.b_xx(t, x, u);
            d.sxx[m] = c.sigma_xx(t, x, u);
            d.d2f[m] = c.d2f(t, x, y, z, u);
        }
    }
    return d;
}

/// Weighting law for the conditional-expectation fits. The cost equation's
/// target noise scales with the local diffusion (multiplicative problems span
/// decades), so it uses the smooth 1/sigma^2 law; the adjoint targets are
/// smooth bounded functions fitted with uniform weights (the winsorized
/// coordinate bounds tail leverage).
enum class WeightPolicy { DiffusionPrior, Uniform };

/// Shared backward-regression state: masks failed paths out of the fits and
/// keeps NaNs on them. An optional positive per-path scale channel
/// normalizes exponential-scale targets (the q* factor of the adjoint FBSDE).
struct BackwardContext {
    const ControlProblem& problem;
    const PathBundle& paths;
    std::vector<int> active;
    ConditionalFitter fitter;
    double dt;
    WeightPolicy policy;

    BackwardContext(const ControlProblem& pb, const PathBundle& p, const RegressionBasis& basis,
                    std::vector<std::string>* warnings,
                    WeightPolicy policy_ = WeightPolicy::Uniform)
        : problem(pb), paths(p), active(active_indices(p)), fitter(basis, warnings),
          dt(p.grid.dt()), policy(policy_) {}

    VectorXd gather(const Eigen::ArrayXd& col) const {
        VectorXd v(active.size());
        for (std::size_t k = 0; k < active.size(); ++k) v[k] = col[active[k]];
        return v;
    }

    void scatter(const VectorXd& v, Eigen::ArrayXd& col) const {
        col.setConstant(std::numeric_limits<double>::quiet_NaN());
        for (std::size_t k = 0; k < active.size(); ++k) col[active[k]] = v[k];
    }

    VectorXd diffusion_weights(int i) const {
        const double t = paths.grid.node(i);
        VectorXd sig2(active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            int m = active[k];
            double s = problem.coeffs.sigma(t, paths.X(m, i), paths.U(m, i));
            sig2[k] = s * s;
        }
        std::vector<double> sorted(sig2.data(), sig2.data() + sig2.size());
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        double floor = std::max(1e-12, 1e-4 * sorted[sorted.size() / 2]);
        VectorXd w(sig2.size());
        for (Eigen::Index k = 0; k < sig2.size(); ++k) w[k] = 1.0 / std::max(sig2[k], floor);
        return w;
    }

    /// Continuation value E[next | X_i] and covariation E[(next-cont) dW]/dt,
    /// with the plain sample mean at the degenerate initial cross-section.
    /// A pilot fit (diffusion-scale prior) estimates the local residual
    /// variance; the final fits are inverse-variance weighted.
    void step_regressions(int i, const Eigen::ArrayXd& next, const Eigen::ArrayXd* scale,
                          Eigen::ArrayXd& cont_out, Eigen::ArrayXd& cov_out,
                          double* residual_rms) {
        VectorXd state = gather(paths.X.col(i));
        VectorXd target = gather(next);
        VectorXd dw = gather(paths.dW.col(i));
        VectorXd sc;
        if (scale) {
            sc = gather(*scale);
            target = target.cwiseQuotient(sc);
        }
        VectorXd cont;
        if (i == 0) {
            cont = VectorXd::Constant(target.size(), target.mean());
            if (residual_rms)
                *residual_rms = std::sqrt((target.array() - cont[0]).square().sum() /
                                          std::max<Eigen::Index>(1, target.size())) /
                                std::sqrt(double(target.size()));
        } else {
            VectorXd weights = policy == WeightPolicy::DiffusionPrior
                                   ? diffusion_weights(i)
                                   : VectorXd::Ones(target.size());
            cont = fitter.fit(state, target, &weights, residual_rms);
            VectorXd mart = (target - cont).cwiseProduct(dw) / dt;
            VectorXd cov = fitter.fit(state, mart, &weights, nullptr);
            finish(scale ? &sc : nullptr, cont, cov, cont_out, cov_out);
            return;
        }
        VectorXd mart = (target - cont).cwiseProduct(dw) / dt;
        VectorXd cov = VectorXd::Constant(target.size(), mart.mean());
        finish(scale ? &sc : nullptr, cont, cov, cont_out, cov_out);
    }

    void finish(const VectorXd* sc, VectorXd& cont, VectorXd& cov, Eigen::ArrayXd& cont_out,
                Eigen::ArrayXd& cov_out) {
        if (sc) {
            cont = cont.cwiseProduct(*sc);
            cov = cov.cwiseProduct(*sc);
        }
        cont_out.resize(paths.paths());
        cov_out.resize(paths.paths());
        scatter(cont, cont_out);
        scatter(cov, cov_out);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Cost BSDE
// ---------------------------------------------------------------------------

BsdeSolution solve_bsde(const ControlProblem& problem, const PathBundle& paths,
                        const RegressionBasis& basis, const BsdeOptions& opts) {
    const int M = paths.paths();
    const int N = paths.steps();
    const auto& c = problem.coeffs;

    BsdeSolution sol;
    sol.Y.setConstant(M, N + 1, std::numeric_limits<double>::quiet_NaN());
    sol.Z.setConstant(M, N, std::numeric_limits<double>::quiet_NaN());

    BackwardContext ctx(problem, paths, basis, &sol.warnings, WeightPolicy::DiffusionPrior);
    if (ctx.active.empty()) throw std::runtime_error("all paths failed; nothing to solve");

    for (int m : ctx.active) sol.Y(m, N) = c.phi(paths.X(m, N));

    double worst_resid = 0.0, noise_sq = 0.0;
    for (int i = N - 1; i >= 0; --i) {
        Eigen::ArrayXd cont, zcol;
        double resid = 0;
        ctx.step_regressions(i, sol.Y.col(i + 1), nullptr, cont, zcol, &resid);
        worst_resid = std::max(worst_resid, resid);
        noise_sq += resid * resid;
        const double t = paths.grid.node(i);
        for (int m : ctx.active) {
            double y0 = cont[m];
            double z0 = zcol[m];
            double y = y0 + c.f(t, paths.X(m, i), y0, z0, paths.U(m, i)) * ctx.dt;
            if (opts.picard_correction)
                y = y0 + c.f(t, paths.X(m, i), y, z0, paths.U(m, i)) * ctx.dt;
            sol.Y(m, i) = y;
            sol.Z(m, i) = z0;
        }
    }
    sol.regression_residual_scale = worst_resid;
    sol.value_noise_estimate = std::sqrt(noise_sq);
    return sol;
}

CostResult cost_functional(const ControlProblem& problem, double t, double x,
                           const ControlPolicy& policy, const McSpec& mc) {
    if (!(t >= problem.t0 && t < problem.T))
        throw std::invalid_argument("cost start time outside [t0, T)");
    TimeGrid grid(t, problem.T, mc.steps);
    NoiseBundle noise = make_noise(grid, mc.paths, mc.seed);
    PathBundle paths = simulate_forward(problem, policy, grid, noise, x, mc.threads);
    BsdeSolution sol = solve_bsde(problem, paths, mc.basis);

    CostResult out;
    out.failed_paths = paths.n_failed;
    double y0 = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> next;
    for (int m = 0; m < paths.paths(); ++m) {
        if (paths.failed[m]) continue;
        y0 = sol.Y(m, 0);
        next.push_back(sol.Y(m, 1));
    }
    out.J = -y0;
    double mean = 0;
    for (double v : next) mean += v;
    mean /= next.size();
    double var = 0;
    for (double v : next) var += (v - mean) * (v - mean);
    var /= std::max<std::size_t>(1, next.size() - 1);
    out.stderr_ = std::sqrt(var / next.size() +
                            sol.value_noise_estimate * sol.value_noise_estimate);
    return out;
}

BsdeSolution solve_custom_bsde(const ControlProblem& problem, const LinearBsdeSpec& eq,
                               const PathBundle& paths, const RegressionBasis& basis) {
    const int M = paths.paths();
    const int N = paths.steps();

    BsdeSolution sol;
    sol.Y.setConstant(M, N + 1, std::numeric_limits<double>::quiet_NaN());
    sol.Z.setConstant(M, N, std::numeric_limits<double>::quiet_NaN());

    BackwardContext ctx(problem, paths, basis, &sol.warnings);
    for (int m : ctx.active) sol.Y(m, N) = eq.terminal(paths.X(m, N));

    for (int i = N - 1; i >= 0; --i) {
        Eigen::ArrayXd cont, zcol;
        double resid = 0;
        ctx.step_regressions(i, sol.Y.col(i + 1), nullptr, cont, zcol, &resid);
        sol.regression_residual_scale = std::max(sol.regression_residual_scale, resid);
        const double t = paths.grid.node(i);
        for (int m : ctx.active) {
            sol.Y(m, i) = cont[m] + eq.driver(t, paths.X(m, i), cont[m], zcol[m]) * ctx.dt;
            sol.Z(m, i) = zcol[m];
        }
    }
    return sol;
}

// ---------------------------------------------------------------------------
// First-order adjoint BSDE (literal driver)
// ---------------------------------------------------------------------------

FirstOrderAdjoint solve_first_order_adjoint(const ControlProblem& problem, const PathBundle& paths,
                                            const BsdeSolution& cost, const RegressionBasis& basis) {
    const int M = paths.paths();
    const int N = paths.steps();
    const auto& c = problem.coeffs;

    FirstOrderAdjoint adj;
    adj.p.setConstant(M, N + 1, std::numeric_limits<double>::quiet_NaN());
    adj.q.setConstant(M, N, std::numeric_limits<double>::quiet_NaN());

    BackwardContext ctx(problem, paths, basis, &adj.warnings);
    for (int m : ctx.active) adj.p(m, N) = c.phi_x(paths.X(m, N));

    for (int i = N - 1; i >= 0; --i) {
        Eigen::ArrayXd cont, qcol;
        ctx.step_regressions(i, adj.p.col(i + 1), nullptr, cont, qcol, nullptr);
        DerivColumns d = eval_derivatives(problem, paths, cost, i, false);
        for (int m : ctx.active) {
            double driver = d.fy[m] * cont[m] + (d.fz[m] * d.sx[m] + d.bx[m]) * cont[m] +
                            d.fz[m] * qcol[m] + d.sx[m] * qcol[m] + d.fx[m];
            adj.p(m, i) = cont[m] + driver * ctx.dt;
            adj.q(m, i) = qcol[m];
        }
    }
    return adj;
}

// ---------------------------------------------------------------------------
// Second-order adjoint BSDE (all driver terms, n = 1)
// ---------------------------------------------------------------------------

SecondOrderAdjoint solve_second_order_adjoint(const ControlProblem& problem,
                                              const PathBundle& paths, const BsdeSolution& cost,
                                              const FirstOrderAdjoint& first,
                                              const RegressionBasis& basis) {
    const int M = paths.paths();
    const int N = paths.steps();
    const auto& c = problem.coeffs;

    SecondOrderAdjoint adj;
    adj.P.setConstant(M, N + 1, std::numeric_limits<double>::quiet_NaN());
    adj.Q.setConstant(M, N, std::numeric_limits<double>::quiet_NaN());

    BackwardContext ctx(problem, paths, basis, &adj.warnings);
    for (int m : ctx.active) adj.P(m, N) = c.phi_xx(paths.X(m, N));

    for (int i = N - 1; i >= 0; --i) {
        Eigen::ArrayXd cont, Qcol;
        ctx.step_regressions(i, adj.P.col(i + 1), nullptr, cont, Qcol, nullptr);
        DerivColumns d = eval_derivatives(problem, paths, cost, i, true);
        for (int m : ctx.active) {
            double p = first.p(m, i);
            double q = first.q(m, i);
            double lin = d.fy[m] * cont[m] + 2.0 * (d.fz[m] * d.sx[m] + d.bx[m]) * cont[m] +
                         d.sx[m] * d.sx[m] * cont[m] + d.fz[m] * Qcol[m] + 2.0 * d.sx[m] * Qcol[m];
            double src = d.bxx[m] * p + d.sxx[m] * (d.fz[m] * p + q);
            Eigen::Vector3d w(1.0, p, d.sx[m] * p + q);
            double quad = w.dot(d.d2f[m] * w);
            adj.P(m, i) = cont[m] + (lin + src + quad) * ctx.dt;
            adj.Q(m, i) = Qcol[m];
        }
    }
    return adj;
}

// ---------------------------------------------------------------------------
// Adjoint FBSDE and transform
// ---------------------------------------------------------------------------

FbsdeAdjoint solve_fbsde_adjoint(const ControlProblem& problem, const PathBundle& paths,
                                 const BsdeSolution& cost, const RegressionBasis& basis) {
    const int M = paths.paths();
    const int N = paths.steps();
    const auto& c = problem.coeffs;
    const double dt = paths.grid.dt();

    FbsdeAdjoint adj;
    adj.pstar.setConstant(M, N + 1, std::numeric_limits<double>::quiet_NaN());
    adj.qstar.setConstant(M, N + 1, std::numeric_limits<double>::quiet_NaN());
    adj.kstar.setConstant(M, N, std::numeric_limits<double>::quiet_NaN());

    BackwardContext ctx(problem, paths, basis, &adj.warnings);

    // Forward component: exact exponential with left-endpoint sums for the dt
    // integrals and the simulated increments for the stochastic integral.
    for (int m : ctx.active) {
        double logq = 0.0;
        adj.qstar(m, 0) = 1.0;
        for (int i = 0; i < N; ++i) {
            double t = paths.grid.node(i);
            double x = paths.X(m, i), u = paths.U(m, i);
            double y = cost.Y(m, i), z = cost.Z(m, i);
            double fy = c.f_y(t, x, y, z, u);
            double fz = c.f_z(t, x, y, z, u);
            logq += (fy - 0.5 * fz * fz) * dt + fz * paths.dW(m, i);
            adj.qstar(m, i + 1) = std::exp(logq);
        }
    }

    for (int m : ctx.active) adj.pstar(m, N) = -c.phi_x(paths.X(m, N)) * adj.qstar(m, N);

    // p* carries the exponential scale of q*; regressing p*/q*_i on the state
    // (and scaling back) removes it, which is exactly the transform structure
    // p* = -p q*.
    for (int i = N - 1; i >= 0; --i) {
        Eigen::ArrayXd scale = adj.qstar.col(i);
        Eigen::ArrayXd cont, kcol;
        ctx.step_regressions(i, adj.pstar.col(i + 1), &scale, cont, kcol, nullptr);
        DerivColumns d = eval_derivatives(problem, paths, cost, i, false);
        for (int m : ctx.active) {
            double driver = d.bx[m] * cont[m] - d.fx[m] * adj.qstar(m, i) + d.sx[m] * kcol[m];
            adj.pstar(m, i) = cont[m] + driver * ctx.dt;
            adj.kstar(m, i) = kcol[m];
        }
    }
    return adj;
}

TransformedAdjoint transform_adjoint(const ControlProblem& problem, const PathBundle& paths,
                                     const BsdeSolution& cost, const FbsdeAdjoint& fbsde) {
    const int M = paths.paths();
    const int N = paths.steps();
    const auto& c = problem.coeffs;

    for (int m = 0; m < M; ++m) {
        if (paths.failed[m]) continue;
        for (int i = 0; i <= N; ++i) {
            double q = fbsde.qstar(m, i);
            if (!(q > 0.0) || !std::isfinite(q)) {
                std::ostringstream os;
                os << "q* invariant violated at path " << m << ", step " << i << " (q*=" << q << ")";
                throw std::runtime_error(os.str());
            }
        }
    }

    TransformedAdjoint tr;
    tr.p = -fbsde.pstar / fbsde.qstar;
    tr.q.setConstant(M, N, std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < N; ++i) {
        double t = paths.grid.node(i);
        for (int m = 0; m < M; ++m) {
            if (paths.failed[m]) continue;
            double fz = c.f_z(t, paths.X(m, i), cost.Y(m, i), cost.Z(m, i), paths.U(m, i));
            tr.q(m, i) =
                -(fbsde.kstar(m, i) - fbsde.pstar(m, i) * fz) / fbsde.qstar(m, i);
        }
    }
    return tr;
}

}  // namespace rsoc
