#include "rsoc/examples.hpp"

#include <cmath>
#include <stdexcept>

namespace rsoc {

namespace {

// ln(ch x) and sech^2(x), stable for large |x|.
double log_cosh(double x) {
    double a = std::abs(x);
    if (a > 30.0) return a - std::log(2.0) + std::log1p(std::exp(-2.0 * a));
    return std::log(std::cosh(x));
}

double sech2(double x) {
    double a = std::abs(x);
    if (a > 350.0) return 4.0 * std::exp(-2.0 * a);
    double c = std::cosh(x);
    return 1.0 / (c * c);
}

Eigen::Matrix3d d2f_xx_only(double fxx) {
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    H(0, 0) = fxx;
    return H;
}

ControlProblem make_ex31() {
    ControlProblem p;
    p.n = 1;
    p.t0 = 0.0;
    p.T = 1.0;
    p.label = "ex31";
    p.controls = IntervalUnion::of({{-1.0, 0.0}, {1.0, 2.0}});

    CoefficientSet c;
    c.b = [](double, double x, double u) { return x * (1.0 + u); };
    c.b_x = [](double, double, double u) { return 1.0 + u; };
    c.b_xx = [](double, double, double) { return 0.0; };
    c.sigma = [](double, double x, double u) { return x * u; };
    c.sigma_x = [](double, double, double u) { return u; };
    c.sigma_xx = [](double, double, double) { return 0.0; };
    c.f = [](double, double, double, double z, double u) { return -z * u; };
    c.f_x = [](double, double, double, double, double) { return 0.0; };
    c.f_y = [](double, double, double, double, double) { return 0.0; };
    c.f_z = [](double, double, double, double, double u) { return -u; };
    c.d2f = [](double, double, double, double, double) { return Eigen::Matrix3d::Zero().eval(); };
    c.phi = [](double x) { return x; };
    c.phi_x = [](double) { return 1.0; };
    c.phi_xx = [](double) { return 0.0; };
    c.time_independent = true;
    c.driver_y_free = true;
    c.driver_z_linear = true;
    p.coeffs = std::move(c);

    auto aux = std::make_shared<ExampleAux>();
    aux->id = "ex31";
    const double T = p.T;
    aux->V = [T](double t, double x) {
        return x <= 0.0 ? -std::exp(t - T) * x : -std::exp(T - t) * x;
    };
    aux->V_t = [T](double t, double x) {
        return x <= 0.0 ? -std::exp(t - T) * x : std::exp(T - t) * x;
    };
    aux->V_x = [T](double t, double x) {
        return x <= 0.0 ? -std::exp(t - T) : -std::exp(T - t);
    };
    aux->V_xx = [](double, double) { return 0.0; };
    aux->value_smooth = false;
    aux->p_bar = [T](double s, double x) {
        if (x < 0.0) return std::exp(s - T);
        if (x > 0.0) return std::exp(T - s);
        return std::numeric_limits<double>::quiet_NaN();
    };
    aux->q_bar = [](double, double) { return 0.0; };
    aux->P_bar = [](double, double) { return 0.0; };
    aux->Q_bar = [](double, double) { return 0.0; };
    aux->optimal_constants = [](double x0) -> std::vector<double> {
        if (x0 < 0.0) return {-1.0, 2.0};
        if (x0 > 0.0) return {0.0, 1.0};
        return {};  // every admissible control is optimal at x0 = 0
    };
    aux->suboptimal_constant = 0.0;  // suboptimal for x0 < 0
    aux->basis_localize_sign = true;
    aux->description =
        "b = x(1+u), sigma = x u, f = -z u, phi = x, U = [-1,0] U [1,2]; "
        "V(t,x) = -e^{t-T} x for x <= 0, -e^{T-t} x for x > 0";
    p.aux = std::move(aux);
    return p;
}

ControlProblem make_ex32() {
    ControlProblem p;
    p.n = 1;
    p.t0 = 0.0;
    p.T = 1.0;
    p.label = "ex32";
    p.controls = IntervalUnion::of({{-3.0, -2.0}, {1.0, 2.0}});

    CoefficientSet c;
    c.b = [](double, double, double u) { return 2.0 * u; };
    c.b_x = [](double, double, double) { return 0.0; };
    c.b_xx = [](double, double, double) { return 0.0; };
    c.sigma = [](double, double, double u) { return u; };
    c.sigma_x = [](double, double, double) { return 0.0; };
    c.sigma_xx = [](double, double, double) { return 0.0; };
    c.f = [](double, double x, double, double z, double u) {
        double th = std::tanh(x);
        return 0.5 * u * u * th * th - u * th - u * u - u - z;
    };
    c.f_x = [](double, double x, double, double, double u) {
        double th = std::tanh(x), s2 = sech2(x);
        return u * u * th * s2 - u * s2;
    };
    c.f_y = [](double, double, double, double, double) { return 0.0; };
    c.f_z = [](double, double, double, double, double) { return -1.0; };
    c.d2f = [](double, double x, double, double, double u) {
        double th = std::tanh(x), s2 = sech2(x);
        double fxx = u * u * (s2 * s2 - 2.0 * th * th * s2) + 2.0 * u * th * s2;
        return d2f_xx_only(fxx);
    };
    c.phi = [](double x) { return log_cosh(x); };
    c.phi_x = [](double x) { return std::tanh(x); };
    c.phi_xx = [](double x) { return sech2(x); };
    c.time_independent = true;
    c.driver_y_free = true;
    c.driver_z_linear = true;
    p.coeffs = std::move(c);

    auto aux = std::make_shared<ExampleAux>();
    aux->id = "ex32";
    aux->V = [](double, double x) { return -log_cosh(x); };
    aux->V_t = [](double, double) { return 0.0; };
    aux->V_x = [](double, double x) { return -std::tanh(x); };
    aux->V_xx = [](double, double x) { return -sech2(x); };
    aux->value_smooth = true;
    const double u_opt = -2.0;
    aux->p_bar = [](double, double x) { return std::tanh(x); };
    aux->q_bar = [u_opt](double, double x) { return u_opt * sech2(x); };
    aux->P_bar = [](double, double x) { return sech2(x); };
    aux->Q_bar = [u_opt](double, double x) { return -2.0 * u_opt * sech2(x) * std::tanh(x); };
    aux->optimal_constants = [](double) -> std::vector<double> { return {-2.0}; };
    aux->description =
        "b = 2u, sigma = u, f = |u th x|^2/2 - u th x - u^2 - u - z, phi = ln ch x, "
        "U = [-3,-2] U [1,2]; V(t,x) = -ln ch x, optimal u = -2";
    p.aux = std::move(aux);
    return p;
}

ControlProblem make_ex33() {
    ControlProblem p;
    p.n = 1;
    p.t0 = 0.0;
    p.T = 1.0;
    p.label = "ex33";
    p.controls = IntervalUnion::of({{-1.0, 1.0}, {2.0, 4.0}});

    CoefficientSet c;
    c.b = [](double, double, double u) { return 2.0 * u; };
    c.b_x = [](double, double, double) { return 0.0; };
    c.b_xx = [](double, double, double) { return 0.0; };
    c.sigma = [](double, double, double u) { return u; };
    c.sigma_x = [](double, double, double) { return 0.0; };
    c.sigma_xx = [](double, double, double) { return 0.0; };
    c.f = [](double, double x, double, double z, double u) {
        double th = std::tanh(x);
        return 0.5 * u * u * th * th - 0.5 * th * th - u * u - z;
    };
    c.f_x = [](double, double x, double, double, double u) {
        return std::tanh(x) * sech2(x) * (u * u - 1.0);
    };
    c.f_y = [](double, double, double, double, double) { return 0.0; };
    c.f_z = [](double, double, double, double, double) { return -1.0; };
    c.d2f = [](double, double x, double, double, double u) {
        double th = std::tanh(x), s2 = sech2(x);
        double fxx = (u * u - 1.0) * (s2 * s2 - 2.0 * th * th * s2);
        return d2f_xx_only(fxx);
    };
    c.phi = [](double x) { return log_cosh(x); };
    c.phi_x = [](double x) { return std::tanh(x); };
    c.phi_xx = [](double x) { return sech2(x); };
    c.time_independent = true;
    c.driver_y_free = true;
    c.driver_z_linear = true;
    p.coeffs = std::move(c);

    auto aux = std::make_shared<ExampleAux>();
    aux->id = "ex33";
    aux->V = [](double, double x) { return -log_cosh(x); };
    aux->V_t = [](double, double) { return 0.0; };
    aux->V_x = [](double, double x) { return -std::tanh(x); };
    aux->V_xx = [](double, double x) { return -sech2(x); };
    aux->value_smooth = true;
    aux->p_bar = [](double, double x) { return std::tanh(x); };
    aux->q_bar = [](double, double x) { return sech2(x) * std::tanh(x); };
    aux->optimal_constants = [](double) -> std::vector<double> { return {}; };
    aux->feedback_optimal = [](double, double x) { return std::tanh(x); };
    aux->feedback_name = "th-x";
    aux->description =
        "b = 2u, sigma = u, f = |u th x|^2/2 - |th x|^2/2 - u^2 - z, phi = ln ch x, "
        "U = [-1,1] U [2,4]; V(t,x) = -ln ch x, optimal u(s) = th X(s)";
    p.aux = std::move(aux);
    return p;
}

}  // namespace

ControlProblem builtin_example(const std::string& id) {
    if (id == "ex31") return make_ex31();
    if (id == "ex32") return make_ex32();
    if (id == "ex33") return make_ex33();
    throw std::invalid_argument("unknown builtin example '" + id +
                                "' (known: ex31, ex32, ex33)");
}

std::vector<std::string> builtin_example_ids() { return {"ex31", "ex32", "ex33"}; }

}  // namespace rsoc
