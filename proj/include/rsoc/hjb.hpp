#pragma once

#include "rsoc/model.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace rsoc {

enum class BoundaryPolicy { LinearExtrapolation, DirichletClosedForm };

/// Discretization of the backward HJB sweep. dt = 0 selects the largest
/// stable step automatically; explicit dt is validated against the stability
/// bound and refused when it violates it.
struct GridSpec {
    double x_lo = -3.0, x_hi = 3.0;
    double dx = 0.01;
    double dt = 0.0;
    BoundaryPolicy boundary = BoundaryPolicy::LinearExtrapolation;
    double control_grid_step = 0.01;
    int store_times = 257;
    bool force_full_scan = false;  // diagnostics: skip the certified fast sup
};

struct StabilityRecord {
    double bound = 0.0;       // spec bound dx^2 / (max sigma^2 + dx max|b| + dx^2 L_f)
    double dt_used = 0.0;
    long steps = 0;
    bool fast_sup_path = false;  // piecewise-quadratic control sup certified
};

/// Raised when a requested dt violates the stability bound.
struct StabilityError : std::runtime_error {
    StabilityError(double bound_, double requested_)
        : std::runtime_error("unstable time step: dt = " + std::to_string(requested_) +
                             " exceeds the stability bound " + std::to_string(bound_)),
          bound(bound_),
          requested(requested_) {}
    double bound;
    double requested;
};

/// Discrete value function: snapshot rows at stored times (always including
/// t0 and T), terminal row equal to -phi exactly.
struct ValueGrid {
    Eigen::VectorXd t_nodes;  // ascending, first = t0, last = T
    Eigen::VectorXd x_nodes;
    Eigen::MatrixXd v;  // t_nodes.size() x x_nodes.size()
    GridSpec spec;
    StabilityRecord stability;
    double t0 = 0.0, T = 1.0;

    double dx() const { return spec.dx; }
};

ValueGrid solve_hjb(const ControlProblem& problem, const GridSpec& spec);

/// Bilinear interpolation; out-of-range queries extrapolate per the boundary
/// policy and set *extrapolated.
double eval_value(const ValueGrid& grid, double t, double x, bool* extrapolated = nullptr);

struct DerivativeEstimate {
    double v = 0.0;
    double v_x_left = 0.0;
    double v_x_right = 0.0;
    double v_xx = 0.0;
    bool widened_stencil = false;
};

DerivativeEstimate estimate_derivatives(const ValueGrid& grid, double t, double x);

struct RegularityReport {
    double lipschitz_const = 0.0;  // max adjacent-node slope magnitude
    double growth_const = 0.0;     // max |v| / (1 + |x|)
};

RegularityReport regularity_report(const ValueGrid& grid);

/// All controls on the discretized control set within value tolerance of the
/// supremum of G(t, x, -v, -v_x, -v_xx, u); tolerance is relative to the
/// supremum's magnitude so positive rescaling leaves the set unchanged.
std::vector<double> argmax_G(const ControlProblem& problem, const ValueGrid& grid, double t,
                             double x, double value_tol = 1e-9);

}  // namespace rsoc
