#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rsoc {

/// Disjoint union of closed control intervals, ordered and strictly increasing.
struct IntervalUnion {
    std::vector<std::pair<double, double>> intervals;

    static IntervalUnion of(std::vector<std::pair<double, double>> ivs);

    /// Membership with absolute tolerance at the endpoints.
    bool contains(double u, double tol = 1e-12) const;
    double lo() const { return intervals.front().first; }
    double hi() const { return intervals.back().second; }

    /// Uniform discretization per interval, both endpoints included. The step
    /// is adjusted per interval so that the endpoints land exactly.
    std::vector<double> grid(double step) const;
};

/// Coefficient functions of the controlled system together with the
/// derivative evaluators required by the solvers. Arguments follow
/// (t, x, u) for b and sigma, (t, x, y, z, u) for the driver f.
struct CoefficientSet {
    std::function<double(double, double, double)> b, sigma;
    std::function<double(double, double, double)> b_x, b_xx, sigma_x, sigma_xx;
    std::function<double(double, double, double, double, double)> f;
    std::function<double(double, double, double, double, double)> f_x, f_y, f_z;
    std::function<Eigen::Matrix3d(double, double, double, double, double)> d2f;  // Hessian in (x,y,z)
    std::function<double(double)> phi, phi_x, phi_xx;

    // Structure hints consumed by solver fast paths; false is always safe.
    bool time_independent = false;
    bool driver_y_free = false;
    bool driver_z_linear = false;
};

struct ExampleAux;  // closed forms for the builtin examples (examples.hpp)

struct ControlProblem {
    int n = 1;
    double t0 = 0.0;
    double T = 1.0;
    CoefficientSet coeffs;
    IntervalUnion controls;
    std::string label;
    std::shared_ptr<const ExampleAux> aux;

    void validate() const;
};

/// Reference optimal pair (t, x_bar, u_bar) with sigma_bar = sigma(t, x_bar, u_bar)
/// evaluated at construction.
struct ReferencePoint {
    double t = 0.0, x_bar = 0.0, u_bar = 0.0, sigma_bar = 0.0;
    static ReferencePoint at(const ControlProblem& problem, double t, double x_bar, double u_bar);
};

/// Generalized Hamiltonian 1/2<A sigma,sigma> + <p,b> + f(t,x,r,sigma^T p,u).
double eval_G(const ControlProblem& problem, double t, double x, double r, double p, double A,
              double u);

/// Maximum-principle Hamiltonian with the sigma - sigma_bar quadratic correction.
double eval_H(const ControlProblem& problem, double t, double x, double y, double z, double u,
              double p, double q, double P, const ReferencePoint& ref);

/// Slope function of the right time-jet inclusion:
/// G(t,x,-V(t,x),p,P,u) + <q - P sigma_bar, sigma(t,x,u)>. `V_tx` is the value
/// V(t,x) supplied by the caller; both published evaluation routes are
/// computed and must agree to 1e-12.
double eval_H1(const ControlProblem& problem, double t, double x, double u, double p_t, double q_t,
               double P_t, double V_tx, const ReferencePoint& ref);

/// Box for sampling (t,x,y,z,u) clouds; u is drawn from the control set.
struct SampleSpec {
    double t_lo = 0.0, t_hi = 1.0;
    double x_lo = -2.0, x_hi = 2.0;
    double y_lo = -2.0, y_hi = 2.0;
    double z_lo = -2.0, z_hi = 2.0;
    int count = 1000;
    std::uint64_t seed = 40504;
};

/// Report-only empirical check of the regularity assumptions: analytic
/// derivatives vs central finite differences, plus Lipschitz/boundedness
/// estimates over the sampled cloud.
struct AssumptionReport {
    struct DerivativeCheck {
        std::string name;
        double max_rel_mismatch = 0.0;
    };
    std::vector<DerivativeCheck> derivative_checks;
    double lipschitz_b = 0.0, lipschitz_sigma = 0.0, lipschitz_f = 0.0, lipschitz_phi = 0.0;
    double bound_first_derivatives = 0.0, bound_second_derivatives = 0.0;
    int samples = 0;

    double max_rel_mismatch() const;
    double mismatch(const std::string& name) const;
};

AssumptionReport check_assumptions(const ControlProblem& problem, const SampleSpec& spec);

/// Coefficients built from closed-form expression strings; derivatives come
/// from second-order forward AD. Structure hints are derived from the
/// expressions' free variables.
CoefficientSet coefficients_from_expressions(const std::string& b_src, const std::string& sigma_src,
                                             const std::string& f_src, const std::string& phi_src);

}  // namespace rsoc
