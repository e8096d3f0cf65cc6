#pragma once

#include "rsoc/examples.hpp"
#include "rsoc/model.hpp"
#include "rsoc/sim.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace rsoc {

/// Polynomial-in-state regression basis for conditional expectations, with
/// optional localization on sign(x) for kinked value functions.
struct RegressionBasis {
    int degree = 4;
    bool localize_sign_x = false;
};

/// Degree-4 global polynomials; localization per the example registry.
inline RegressionBasis default_basis(const ControlProblem& problem) {
    RegressionBasis b;
    b.localize_sign_x = problem.aux && problem.aux->basis_localize_sign;
    return b;
}

struct BsdeOptions {
    bool picard_correction = false;
};

/// Pathwise (Y, Z); Y is M x (N+1) with Y(T) = phi(X(T)) exactly, Z is M x N.
struct BsdeSolution {
    Eigen::ArrayXXd Y;
    Eigen::ArrayXXd Z;
    double regression_residual_scale = 0.0;
    /// Accumulated fitted-value noise of the backward recursion (root sum of
    /// per-step coefficient-noise scales); feeds the cost standard error.
    double value_noise_estimate = 0.0;
    std::vector<std::string> warnings;
};

BsdeSolution solve_bsde(const ControlProblem& problem, const PathBundle& paths,
                        const RegressionBasis& basis, const BsdeOptions& opts = {});

struct CostResult {
    double J = 0.0;
    double stderr_ = 0.0;
    int failed_paths = 0;
};

struct McSpec {
    int paths = 20000;
    int steps = 200;
    std::uint64_t seed = 901;
    RegressionBasis basis;
    int threads = 1;
};

/// Recursive cost J(t,x;u) = -Y(t) by forward simulation + backward regression.
CostResult cost_functional(const ControlProblem& problem, double t, double x,
                           const ControlPolicy& policy, const McSpec& mc);

/// First-order adjoint (p, q); p(T) = phi_x(X(T)) exactly.
struct FirstOrderAdjoint {
    Eigen::ArrayXXd p;  // M x (N+1)
    Eigen::ArrayXXd q;  // M x N
    std::vector<std::string> warnings;
};

FirstOrderAdjoint solve_first_order_adjoint(const ControlProblem& problem, const PathBundle& paths,
                                            const BsdeSolution& cost, const RegressionBasis& basis);

/// Second-order adjoint (P, Q); P(T) = phi_xx(X(T)) exactly.
struct SecondOrderAdjoint {
    Eigen::ArrayXXd P;  // M x (N+1)
    Eigen::ArrayXXd Q;  // M x N
    std::vector<std::string> warnings;
};

SecondOrderAdjoint solve_second_order_adjoint(const ControlProblem& problem,
                                              const PathBundle& paths, const BsdeSolution& cost,
                                              const FirstOrderAdjoint& first,
                                              const RegressionBasis& basis);

/// Adjoint FBSDE triple (p*, q*, k*); q* is the exact pathwise exponential
/// with q*(t0) = 1 and q* > 0, p*(T) = -phi_x(X(T)) q*(T) exactly.
struct FbsdeAdjoint {
    Eigen::ArrayXXd pstar;  // M x (N+1)
    Eigen::ArrayXXd qstar;  // M x (N+1)
    Eigen::ArrayXXd kstar;  // M x N
    std::vector<std::string> warnings;
};

FbsdeAdjoint solve_fbsde_adjoint(const ControlProblem& problem, const PathBundle& paths,
                                 const BsdeSolution& cost, const RegressionBasis& basis);

/// Transform p = -p*(q*)^{-1}, q = -(q*)^{-1}[k* - p* f_z] linking the FBSDE
/// adjoint to the first-order adjoint BSDE. Throws on q* <= 0 or non-finite.
struct TransformedAdjoint {
    Eigen::ArrayXXd p;  // M x (N+1)
    Eigen::ArrayXXd q;  // M x N
};

TransformedAdjoint transform_adjoint(const ControlProblem& problem, const PathBundle& paths,
                                     const BsdeSolution& cost, const FbsdeAdjoint& fbsde);

/// Scalar BSDE -dY = driver(t, x, Y, Z) dt - Z dW with terminal h(X(T)),
/// solved along given paths by the same regression machinery. Used for
/// auxiliary equations (oracles, gap equations).
struct LinearBsdeSpec {
    std::function<double(double, double, double, double)> driver;  // (t, x, ycont, z)
    std::function<double(double)> terminal;
};

BsdeSolution solve_custom_bsde(const ControlProblem& problem, const LinearBsdeSpec& eq,
                               const PathBundle& paths, const RegressionBasis& basis);

}  // namespace rsoc
