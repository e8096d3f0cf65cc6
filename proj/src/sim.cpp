#include "rsoc/sim.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace rsoc {

namespace {

std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9E3779B97f4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Per-path substream: state derived from (seed, path) only; normals via
/// Box-Muller so the sequence is pinned across platforms.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t path) {
        state_ = seed ^ (path * 0xD6E8FEB86659FD93ULL + 0xA5A5A5A5A5A5A5A5ULL);
        // warm up to decorrelate nearby path indices
        splitmix64(state_);
        splitmix64(state_);
    }

    double uniform_open() {  // in (0, 1]
        return (static_cast<double>(splitmix64(state_) >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open();
        double u2 = uniform_open();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

template <typename Fn>
void parallel_over_paths(int M, int threads, Fn&& body) {
    threads = std::max(1, threads);
    if (threads == 1) {
        for (int m = 0; m < M; ++m) body(m);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    int chunk = (M + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
        int lo = w * chunk, hi = std::min(M, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, w, &body, &errors] {
            try {
                for (int m = lo; m < hi; ++m) body(m);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

NoiseBundle make_noise(const TimeGrid& grid, int M, std::uint64_t seed) {
    if (M < 1) throw std::invalid_argument("need at least one path");
    NoiseBundle nb;
    nb.grid = grid;
    nb.M = M;
    nb.seed = seed;
    nb.dW.resize(M, grid.N);
    const double sdt = std::sqrt(grid.dt());
    for (int m = 0; m < M; ++m) {
        PathRng rng(seed, static_cast<std::uint64_t>(m));
        for (int i = 0; i < grid.N; ++i) nb.dW(m, i) = sdt * rng.normal();
    }
    return nb;
}

// ---------------------------------------------------------------------------
// ControlPolicy
// ---------------------------------------------------------------------------

ControlPolicy ControlPolicy::constant(double u) {
    ControlPolicy p;
    p.kind_ = Kind::Constant;
    p.u_ = u;
    std::ostringstream os;
    os << "u=" << u;
    p.name_ = os.str();
    return p;
}

ControlPolicy ControlPolicy::feedback(std::function<double(double, double)> map,
                                      std::string name) {
    ControlPolicy p;
    p.kind_ = Kind::Feedback;
    p.map_ = std::move(map);
    p.name_ = std::move(name);
    return p;
}

ControlPolicy ControlPolicy::tabulated(Eigen::ArrayXXd values, std::string name) {
    ControlPolicy p;
    p.kind_ = Kind::Tabulated;
    p.table_ = std::move(values);
    p.name_ = std::move(name);
    return p;
}

double ControlPolicy::value(double t, double x, int path, int step) const {
    switch (kind_) {
        case Kind::Constant: return u_;
        case Kind::Feedback: return map_(t, x);
        case Kind::Tabulated:
            if (path >= table_.rows() || step >= table_.cols())
                throw std::out_of_range("tabulated policy lookup out of range");
            return table_(path, step);
    }
    return u_;
}

double ControlPolicy::constant_value() const {
    if (kind_ != Kind::Constant) throw std::logic_error("not a constant policy");
    return u_;
}

// ---------------------------------------------------------------------------
// Forward simulation
// ---------------------------------------------------------------------------

PathBundle simulate_forward(const ControlProblem& problem, const ControlPolicy& policy,
                            const TimeGrid& grid, const NoiseBundle& noise, double x0,
                            int threads) {
    if (problem.n != 1) throw std::invalid_argument("forward solver requires n = 1");
    if (noise.grid.N != grid.N || noise.grid.t0 != grid.t0 || noise.grid.T != grid.T)
        throw std::invalid_argument("noise bundle grid does not match");
    const int M = noise.M;
    const int N = grid.N;
    const double dt = grid.dt();

    PathBundle out;
    out.grid = grid;
    out.x0 = x0;
    out.X.resize(M, N + 1);
    out.U.resize(M, N);
    out.dW = noise.dW;
    out.failed.assign(M, 0);

    const auto& c = problem.coeffs;
    const double sign0 = x0 > 0 ? 1.0 : (x0 < 0 ? -1.0 : 0.0);
    std::vector<long> flips(M, 0);

    parallel_over_paths(M, threads, [&](int m) {
        double x = x0;
        out.X(m, 0) = x;
        for (int i = 0; i < N; ++i) {
            double t = grid.node(i);
            double u = policy.value(t, x, m, i);
            if (!problem.controls.contains(u)) {
                std::ostringstream os;
                os << "policy emitted control " << u << " outside the control set at t=" << t;
                throw std::domain_error(os.str());
            }
            out.U(m, i) = u;
            x = x + c.b(t, x, u) * dt + c.sigma(t, x, u) * noise.dW(m, i);
            if (!std::isfinite(x)) {
                out.failed[m] = 1;
                for (int j = i + 1; j <= N; ++j)
                    out.X(m, j) = std::numeric_limits<double>::quiet_NaN();
                for (int j = i; j < N; ++j) out.U(m, j) = u;
                return;
            }
            out.X(m, i + 1) = x;
            if (sign0 != 0.0 && x * sign0 < 0.0) ++flips[m];
        }
    });

    out.n_failed = static_cast<int>(std::count(out.failed.begin(), out.failed.end(), 1));
    out.sign_flips = std::accumulate(flips.begin(), flips.end(), 0L);
    return out;
}

// ---------------------------------------------------------------------------
// Strong-error self test (ex31 closed form)
// ---------------------------------------------------------------------------

StrongErrorTable strong_error(const ControlProblem& ex31, double u, double x0, int paths,
                              std::uint64_t seed, const std::vector<int>& step_ladder) {
    if (ex31.label != "ex31")
        throw std::invalid_argument("strong_error is an ex31-only self test");
    if (step_ladder.empty()) throw std::invalid_argument("empty step ladder");
    int fineN = *std::max_element(step_ladder.begin(), step_ladder.end());
    for (int N : step_ladder)
        if (fineN % N != 0) throw std::invalid_argument("step ladder entries must divide max N");

    TimeGrid fine(ex31.t0, ex31.T, fineN);
    NoiseBundle noise = make_noise(fine, paths, seed);
    ControlPolicy policy = ControlPolicy::constant(u);

    // Exact terminal value from the total increment.
    Eigen::ArrayXd wT = noise.dW.rowwise().sum();
    double horizon = ex31.T - ex31.t0;
    Eigen::ArrayXd exact =
        x0 * ((1.0 + u - 0.5 * u * u) * horizon + u * wT).exp();

    StrongErrorTable table;
    for (int N : step_ladder) {
        int agg = fineN / N;
        TimeGrid grid(ex31.t0, ex31.T, N);
        NoiseBundle coarse;
        coarse.grid = grid;
        coarse.M = paths;
        coarse.seed = seed;
        coarse.dW.resize(paths, N);
        for (int i = 0; i < N; ++i)
            coarse.dW.col(i) = noise.dW.middleCols(i * agg, agg).rowwise().sum();
        PathBundle pb = simulate_forward(ex31, policy, grid, coarse, x0);
        Eigen::ArrayXd sq = (pb.X.col(N) - exact).square();
        double mse = sq.mean();
        table.steps.push_back(N);
        table.rms.push_back(std::sqrt(mse));
        double var_of_sq = (sq - mse).square().mean();
        table.rms_stderr.push_back(0.5 * std::sqrt(var_of_sq / paths) / std::sqrt(mse));
    }

    // Least-squares slope of log(rms) against log(dt).
    int L = static_cast<int>(table.steps.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int k = 0; k < L; ++k) {
        double lx = std::log(horizon / table.steps[k]);
        double ly = std::log(table.rms[k]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
    }
    table.fitted_order = (L * sxy - sx * sy) / (L * sxx - sx * sx);
    return table;
}

}  // namespace rsoc
