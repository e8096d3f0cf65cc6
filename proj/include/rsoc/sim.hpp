#pragma once

#include "rsoc/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rsoc {

/// Uniform time grid on [t0, T] with N steps.
struct TimeGrid {
    double t0 = 0.0, T = 1.0;
    int N = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, int N_) : t0(t0_), T(T_), N(N_) {
        if (!(N >= 1 && T > t0)) throw std::invalid_argument("bad time grid");
    }
    double dt() const { return (T - t0) / N; }
    double node(int i) const { return i == N ? T : t0 + i * dt(); }
};

/// Brownian increments, reproducible per (seed, path) from a counter-style
/// substream; independent of generation order and thread count.
struct NoiseBundle {
    TimeGrid grid;
    int M = 0;
    std::uint64_t seed = 0;
    Eigen::ArrayXXd dW;  // M x N

    /// Total increment W(t_i) - W(t0) for path m up to node i.
    double cumulative(int m, int i) const {
        double w = 0;
        for (int k = 0; k < i; ++k) w += dW(m, k);
        return w;
    }
};

NoiseBundle make_noise(const TimeGrid& grid, int M, std::uint64_t seed);

/// Constant, feedback, or tabulated control policy.
class ControlPolicy {
public:
    enum class Kind { Constant, Feedback, Tabulated };

    static ControlPolicy constant(double u);
    static ControlPolicy feedback(std::function<double(double, double)> map,
                                  std::string name = "feedback");
    static ControlPolicy tabulated(Eigen::ArrayXXd values, std::string name = "tabulated");

    double value(double t, double x, int path, int step) const;
    Kind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    double constant_value() const;

private:
    Kind kind_ = Kind::Constant;
    double u_ = 0.0;
    std::function<double(double, double)> map_;
    Eigen::ArrayXXd table_;
    std::string name_;
};

/// Simulated forward trajectories; X is M x (N+1), controls M x N.
struct PathBundle {
    TimeGrid grid;
    double x0 = 0.0;
    Eigen::ArrayXXd X;
    Eigen::ArrayXXd U;
    Eigen::ArrayXXd dW;
    std::vector<std::uint8_t> failed;  // non-finite state encountered
    int n_failed = 0;
    long sign_flips = 0;  // nodes whose sign differs from sign(x0), x0 != 0

    int paths() const { return static_cast<int>(X.rows()); }
    int steps() const { return grid.N; }
};

/// Euler-Maruyama forward simulation under the given policy. Policy values
/// must lie in the problem's control set; non-finite states flag the path
/// (excluded downstream) without aborting the bundle.
PathBundle simulate_forward(const ControlProblem& problem, const ControlPolicy& policy,
                            const TimeGrid& grid, const NoiseBundle& noise, double x0,
                            int threads = 1);

/// Strong-convergence self test on ex31 against the geometric closed form;
/// all levels are driven by one fine noise set.
struct StrongErrorTable {
    std::vector<int> steps;
    std::vector<double> rms;
    double fitted_order = 0.0;
    std::vector<double> rms_stderr;
};

StrongErrorTable strong_error(const ControlProblem& ex31, double u, double x0, int paths,
                              std::uint64_t seed, const std::vector<int>& step_ladder = {50, 100,
                                                                                         200, 400});

}  // namespace rsoc
