#pragma once

#include "rsoc/model.hpp"

#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace rsoc {

/// Closed forms registered with a builtin example, used as oracles by the
/// verification checks and tests.
struct ExampleAux {
    std::string id;

    // Value function and derivatives. For ex31 the spatial derivatives are the
    // branch derivatives, valid off the kink at x = 0.
    std::function<double(double, double)> V, V_t, V_x, V_xx;  // (t, x)
    bool value_smooth = false;

    // First/second-order adjoints along the registered optimal policy,
    // as functions of (s, X(s)); absent entries mean "no closed form".
    std::function<double(double, double)> p_bar, q_bar, P_bar, Q_bar;

    // Optimal constant controls for a start point x0 (may depend on its sign),
    // and an optimal feedback map when the example's optimum is a feedback law.
    std::function<std::vector<double>(double)> optimal_constants;
    std::function<double(double, double)> feedback_optimal;  // (t, x) -> u
    std::string feedback_name;

    // Registered deliberately suboptimal constant control (negative-control
    // experiments), NaN when none.
    double suboptimal_constant = std::numeric_limits<double>::quiet_NaN();

    bool basis_localize_sign = false;  // kinked value function: split basis on sign(x)

    std::string description;
};

/// Builds one of the three builtin problems (ids: ex31, ex32, ex33) with
/// analytic coefficient derivatives and registered closed forms.
ControlProblem builtin_example(const std::string& id);

std::vector<std::string> builtin_example_ids();

}  // namespace rsoc
