#pragma once

#include "rsoc/examples.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/model.hpp"

#include <functional>
#include <memory>
#include <string>

namespace rsoc {

/// Uniform view over a value function given either as a solved grid or as a
/// registered closed form; jet estimation and the verification checks consume
/// this. Closed forms may carry derivative oracles.
class ValueFunction {
public:
    static ValueFunction from_grid(std::shared_ptr<const ValueGrid> grid);
    static ValueFunction from_example(const ControlProblem& problem);

    double operator()(double t, double x) const { return eval_(t, x); }

    bool closed_form() const { return closed_; }
    bool smooth() const { return smooth_; }
    const std::string& provenance() const { return provenance_; }

    /// Smallest usable probe radius: grid-backed estimates must dominate the
    /// interpolation error, closed forms go to 1e-6.
    double min_radius() const { return min_radius_; }
    double t_hi() const { return t_hi_; }
    double x_lo() const { return x_lo_; }
    double x_hi() const { return x_hi_; }

    bool has_derivatives() const { return static_cast<bool>(vx_); }
    double Vt(double t, double x) const { return vt_(t, x); }
    double Vx(double t, double x) const { return vx_(t, x); }
    double Vxx(double t, double x) const { return vxx_(t, x); }

private:
    std::function<double(double, double)> eval_, vt_, vx_, vxx_;
    std::shared_ptr<const ValueGrid> grid_;
    bool closed_ = false;
    bool smooth_ = false;
    std::string provenance_;
    double min_radius_ = 1e-6;
    double t_hi_ = 1.0, x_lo_ = -10.0, x_hi_ = 10.0;
};

}  // namespace rsoc
