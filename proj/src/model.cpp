#include "rsoc/model.hpp"

#include "rsoc/expr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rsoc {

// ---------------------------------------------------------------------------
// IntervalUnion
// ---------------------------------------------------------------------------

IntervalUnion IntervalUnion::of(std::vector<std::pair<double, double>> ivs) {
    if (ivs.empty()) throw std::invalid_argument("control set must be nonempty");
    for (auto& [lo, hi] : ivs)
        if (!(lo <= hi)) throw std::invalid_argument("control interval with lo > hi");
    for (std::size_t i = 1; i < ivs.size(); ++i)
        if (!(ivs[i - 1].second < ivs[i].first))
            throw std::invalid_argument("control intervals must be disjoint and increasing");
    IntervalUnion u;
    u.intervals = std::move(ivs);
    return u;
}

bool IntervalUnion::contains(double u, double tol) const {
    for (const auto& [lo, hi] : intervals)
        if (u >= lo - tol && u <= hi + tol) return true;
    return false;
}

std::vector<double> IntervalUnion::grid(double step) const {
    if (!(step > 0)) throw std::invalid_argument("control grid step must be positive");
    std::vector<double> out;
    for (const auto& [lo, hi] : intervals) {
        if (hi == lo) {
            out.push_back(lo);
            continue;
        }
        int m = std::max(1, static_cast<int>(std::lround((hi - lo) / step)));
        double h = (hi - lo) / m;
        for (int j = 0; j <= m; ++j) out.push_back(j == m ? hi : lo + j * h);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ControlProblem / ReferencePoint
// ---------------------------------------------------------------------------

void ControlProblem::validate() const {
    if (n < 1) throw std::invalid_argument("state dimension must be >= 1");
    if (!(t0 >= 0 && t0 < T && std::isfinite(T)))
        throw std::invalid_argument("need 0 <= t0 < T < inf");
    if (controls.intervals.empty()) throw std::invalid_argument("empty control set");
    if (!coeffs.b || !coeffs.sigma || !coeffs.f || !coeffs.phi)
        throw std::invalid_argument("missing coefficient function");
}

ReferencePoint ReferencePoint::at(const ControlProblem& problem, double t, double x_bar,
                                  double u_bar) {
    ReferencePoint r;
    r.t = t;
    r.x_bar = x_bar;
    r.u_bar = u_bar;
    r.sigma_bar = problem.coeffs.sigma(t, x_bar, u_bar);
    return r;
}

// ---------------------------------------------------------------------------
// Hamiltonian-type functions
// ---------------------------------------------------------------------------

static void require_control(const ControlProblem& problem, double u) {
    if (!problem.controls.contains(u)) {
        std::ostringstream os;
        os << "control " << u << " outside the control set of " << problem.label;
        throw std::domain_error(os.str());
    }
}

double eval_G(const ControlProblem& problem, double t, double x, double r, double p, double A,
              double u) {
    require_control(problem, u);
    const auto& c = problem.coeffs;
    double s = c.sigma(t, x, u);
    return 0.5 * A * s * s + p * c.b(t, x, u) + c.f(t, x, r, s * p, u);
}

double eval_H(const ControlProblem& problem, double t, double x, double y, double z, double u,
              double p, double q, double P, const ReferencePoint& ref) {
    require_control(problem, u);
    const auto& c = problem.coeffs;
    double s = c.sigma(t, x, u);
    double ds = s - ref.sigma_bar;
    return c.f(t, x, y, z + p * ds, u) + p * c.b(t, x, u) + q * s + 0.5 * P * ds * ds;
}

double eval_H1(const ControlProblem& problem, double t, double x, double u, double p_t, double q_t,
               double P_t, double V_tx, const ReferencePoint& ref) {
    require_control(problem, u);
    const auto& c = problem.coeffs;
    const double r = -V_tx;
    const double s = c.sigma(t, x, u);

    // Route 1: G-decomposition.
    double route_g = eval_G(problem, t, x, r, p_t, P_t, u) + (q_t - P_t * ref.sigma_bar) * s;
    // Route 2: expanded form, sigma_bar read as sigma(t, x_bar, u_bar).
    double route_e = c.f(t, x, r, s * p_t, u) + p_t * c.b(t, x, u) +
                     (q_t - P_t * ref.sigma_bar) * s + 0.5 * P_t * s * s;

    double scale = std::max({1.0, std::abs(route_g), std::abs(route_e)});
    if (std::abs(route_g - route_e) > 1e-12 * scale)
        throw std::logic_error("H1 evaluation routes disagree beyond 1e-12");
    return route_g;
}

// ---------------------------------------------------------------------------
// Assumption checking
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9E3779B97f4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double uniform01(std::uint64_t& s) {
    return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central difference of a univariate slice.
template <typename F>
double fd1(F&& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2 * h);
}

}  // namespace

double AssumptionReport::max_rel_mismatch() const {
    double m = 0;
    for (const auto& d : derivative_checks) m = std::max(m, d.max_rel_mismatch);
    return m;
}

double AssumptionReport::mismatch(const std::string& name) const {
    for (const auto& d : derivative_checks)
        if (d.name == name) return d.max_rel_mismatch;
    throw std::out_of_range("no derivative check named " + name);
}

AssumptionReport check_assumptions(const ControlProblem& problem, const SampleSpec& spec) {
    const auto& c = problem.coeffs;
    const double h = 1e-5;
    AssumptionReport rep;
    rep.samples = spec.count;

    auto track = [&rep](const std::string& name) -> double& {
        rep.derivative_checks.push_back({name, 0.0});
        return rep.derivative_checks.back().max_rel_mismatch;
    };
    double& m_bx = track("b_x");
    double& m_bxx = track("b_xx");
    double& m_sx = track("sigma_x");
    double& m_sxx = track("sigma_xx");
    double& m_px = track("phi_x");
    double& m_pxx = track("phi_xx");
    double& m_fx = track("f_x");
    double& m_fy = track("f_y");
    double& m_fz = track("f_z");
    double& m_d2f = track("d2f");

    std::uint64_t rng = spec.seed;
    auto draw = [&rng](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
    auto draw_u = [&](const IntervalUnion& U) {
        const auto& iv = U.intervals[splitmix64(rng) % U.intervals.size()];
        return draw(iv.first, iv.second);
    };

    for (int k = 0; k < spec.count; ++k) {
        double t = draw(spec.t_lo, spec.t_hi);
        double x = draw(spec.x_lo, spec.x_hi);
        double y = draw(spec.y_lo, spec.y_hi);
        double z = draw(spec.z_lo, spec.z_hi);
        double u = draw_u(problem.controls);

        // Each derivative is checked against central differences of its
        // parent evaluator (second derivatives difference the registered
        // first derivatives); one differentiation level per difference keeps
        // the 1e-6 relative tolerance meaningful in double precision.
        auto b_of_x = [&](double xx) { return c.b(t, xx, u); };
        auto s_of_x = [&](double xx) { return c.sigma(t, xx, u); };
        m_bx = std::max(m_bx, rel_err(c.b_x(t, x, u), fd1(b_of_x, x, h)));
        m_bxx = std::max(m_bxx, rel_err(c.b_xx(t, x, u),
                                        fd1([&](double v) { return c.b_x(t, v, u); }, x, h)));
        m_sx = std::max(m_sx, rel_err(c.sigma_x(t, x, u), fd1(s_of_x, x, h)));
        m_sxx = std::max(m_sxx, rel_err(c.sigma_xx(t, x, u),
                                        fd1([&](double v) { return c.sigma_x(t, v, u); }, x, h)));
        m_px = std::max(m_px, rel_err(c.phi_x(x), fd1(c.phi, x, h)));
        m_pxx = std::max(m_pxx, rel_err(c.phi_xx(x), fd1(c.phi_x, x, h)));

        auto f_of = [&](double xx, double yy, double zz) { return c.f(t, xx, yy, zz, u); };
        m_fx = std::max(m_fx, rel_err(c.f_x(t, x, y, z, u),
                                      fd1([&](double v) { return f_of(v, y, z); }, x, h)));
        m_fy = std::max(m_fy, rel_err(c.f_y(t, x, y, z, u),
                                      fd1([&](double v) { return f_of(x, v, z); }, y, h)));
        m_fz = std::max(m_fz, rel_err(c.f_z(t, x, y, z, u),
                                      fd1([&](double v) { return f_of(x, y, v); }, z, h)));

        Eigen::Matrix3d H = c.d2f(t, x, y, z, u);
        if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            throw std::logic_error("d2f is not symmetric");
        Eigen::Matrix3d Hfd;
        auto fx_at = [&](double a, double bb, double cc) { return c.f_x(t, a, bb, cc, u); };
        auto fy_at = [&](double a, double bb, double cc) { return c.f_y(t, a, bb, cc, u); };
        auto fz_at = [&](double a, double bb, double cc) { return c.f_z(t, a, bb, cc, u); };
        Hfd(0, 0) = fd1([&](double v) { return fx_at(v, y, z); }, x, h);
        Hfd(0, 1) = fd1([&](double v) { return fx_at(x, v, z); }, y, h);
        Hfd(0, 2) = fd1([&](double v) { return fx_at(x, y, v); }, z, h);
        Hfd(1, 0) = fd1([&](double v) { return fy_at(v, y, z); }, x, h);
        Hfd(1, 1) = fd1([&](double v) { return fy_at(x, v, z); }, y, h);
        Hfd(1, 2) = fd1([&](double v) { return fy_at(x, y, v); }, z, h);
        Hfd(2, 0) = fd1([&](double v) { return fz_at(v, y, z); }, x, h);
        Hfd(2, 1) = fd1([&](double v) { return fz_at(x, v, z); }, y, h);
        Hfd(2, 2) = fd1([&](double v) { return fz_at(x, y, v); }, z, h);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m_d2f = std::max(m_d2f, rel_err(H(i, j), Hfd(i, j)));

        // Lipschitz ratios from a paired draw at the same (t,u).
        {
            double x2 = draw(spec.x_lo, spec.x_hi);
            double y2 = draw(spec.y_lo, spec.y_hi);
            double z2 = draw(spec.z_lo, spec.z_hi);
            double dx = std::abs(x - x2) + 1e-300;
            double dxyz = std::abs(x - x2) + std::abs(y - y2) + std::abs(z - z2) + 1e-300;
            rep.lipschitz_b = std::max(rep.lipschitz_b, std::abs(c.b(t, x, u) - c.b(t, x2, u)) / dx);
            rep.lipschitz_sigma =
                std::max(rep.lipschitz_sigma, std::abs(c.sigma(t, x, u) - c.sigma(t, x2, u)) / dx);
            rep.lipschitz_f = std::max(
                rep.lipschitz_f, std::abs(c.f(t, x, y, z, u) - c.f(t, x2, y2, z2, u)) / dxyz);
            rep.lipschitz_phi = std::max(rep.lipschitz_phi, std::abs(c.phi(x) - c.phi(x2)) / dx);
        }
        rep.bound_first_derivatives =
            std::max({rep.bound_first_derivatives, std::abs(c.b_x(t, x, u)),
                      std::abs(c.sigma_x(t, x, u)), std::abs(c.f_x(t, x, y, z, u)),
                      std::abs(c.f_y(t, x, y, z, u)), std::abs(c.f_z(t, x, y, z, u)),
                      std::abs(c.phi_x(x))});
        rep.bound_second_derivatives =
            std::max({rep.bound_second_derivatives, std::abs(c.b_xx(t, x, u)),
                      std::abs(c.sigma_xx(t, x, u)), std::abs(c.phi_xx(x)),
                      H.cwiseAbs().maxCoeff()});
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Expression-backed coefficients
// ---------------------------------------------------------------------------

CoefficientSet coefficients_from_expressions(const std::string& b_src, const std::string& sigma_src,
                                             const std::string& f_src, const std::string& phi_src) {
    auto be = std::make_shared<Expression>(parse(b_src));
    auto se = std::make_shared<Expression>(parse(sigma_src));
    auto fe = std::make_shared<Expression>(parse(f_src));
    auto pe = std::make_shared<Expression>(parse(phi_src));

    auto check_vars = [](const Expression& e, std::initializer_list<std::string> allowed,
                         const std::string& what) {
        for (const auto& v : e.free_variables())
            if (std::find(allowed.begin(), allowed.end(), v) == allowed.end())
                throw std::invalid_argument(what + " may not depend on '" + v + "'");
    };
    check_vars(*be, {"t", "x", "u"}, "b");
    check_vars(*se, {"t", "x", "u"}, "sigma");
    check_vars(*fe, {"t", "x", "y", "z", "u"}, "f");
    check_vars(*pe, {"x"}, "phi");

    auto has_var = [](const Expression& e, const std::string& v) {
        auto vars = e.free_variables();
        return std::find(vars.begin(), vars.end(), v) != vars.end();
    };

    CoefficientSet c;
    static const std::vector<std::string> kX = {"x"};
    static const std::vector<std::string> kXYZ = {"x", "y", "z"};

    auto bind3 = [](double t, double x, double u) {
        return std::map<std::string, double>{{"t", t}, {"x", x}, {"u", u}};
    };
    auto bind5 = [](double t, double x, double y, double z, double u) {
        return std::map<std::string, double>{{"t", t}, {"x", x}, {"y", y}, {"z", z}, {"u", u}};
    };

    c.b = [be, bind3](double t, double x, double u) { return be->eval(bind3(t, x, u)); };
    c.sigma = [se, bind3](double t, double x, double u) { return se->eval(bind3(t, x, u)); };
    c.f = [fe, bind5](double t, double x, double y, double z, double u) {
        return fe->eval(bind5(t, x, y, z, u));
    };
    c.phi = [pe](double x) { return pe->eval({{"x", x}}); };

    c.b_x = [be, bind3](double t, double x, double u) {
        return be->eval_jet2(bind3(t, x, u), kX).grad[0];
    };
    c.b_xx = [be, bind3](double t, double x, double u) {
        return be->eval_jet2(bind3(t, x, u), kX).hess(0, 0);
    };
    c.sigma_x = [se, bind3](double t, double x, double u) {
        return se->eval_jet2(bind3(t, x, u), kX).grad[0];
    };
    c.sigma_xx = [se, bind3](double t, double x, double u) {
        return se->eval_jet2(bind3(t, x, u), kX).hess(0, 0);
    };
    c.phi_x = [pe](double x) { return pe->eval_jet2({{"x", x}}, kX).grad[0]; };
    c.phi_xx = [pe](double x) { return pe->eval_jet2({{"x", x}}, kX).hess(0, 0); };
    c.f_x = [fe, bind5](double t, double x, double y, double z, double u) {
        return fe->eval_jet2(bind5(t, x, y, z, u), kXYZ).grad[0];
    };
    c.f_y = [fe, bind5](double t, double x, double y, double z, double u) {
        return fe->eval_jet2(bind5(t, x, y, z, u), kXYZ).grad[1];
    };
    c.f_z = [fe, bind5](double t, double x, double y, double z, double u) {
        return fe->eval_jet2(bind5(t, x, y, z, u), kXYZ).grad[2];
    };
    c.d2f = [fe, bind5](double t, double x, double y, double z, double u) {
        Eigen::Matrix3d H = fe->eval_jet2(bind5(t, x, y, z, u), kXYZ).hess;
        return H;
    };

    c.time_independent = !has_var(*be, "t") && !has_var(*se, "t") && !has_var(*fe, "t");
    c.driver_y_free = !has_var(*fe, "y");
    c.driver_z_linear = false;  // probed numerically by the HJB solver
    return c;
}

}  // namespace rsoc
