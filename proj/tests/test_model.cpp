#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rsoc/examples.hpp"
#include "rsoc/model.hpp"

#include <cmath>
#include <vector>

using namespace rsoc;

namespace {

double sech2(double x) {
    double c = std::cosh(x);
    return 1.0 / (c * c);
}

}  // namespace

TEST_CASE("interval union invariants") {
    CHECK_THROWS(IntervalUnion::of({}));
    CHECK_THROWS(IntervalUnion::of({{1.0, 0.0}}));
    CHECK_THROWS(IntervalUnion::of({{0.0, 2.0}, {1.0, 3.0}}));
    IntervalUnion u = IntervalUnion::of({{-1.0, 0.0}, {1.0, 2.0}});
    CHECK(u.contains(-1.0));
    CHECK(u.contains(2.0 + 1e-13));  // endpoint tolerance 1e-12
    CHECK_FALSE(u.contains(0.5));
    CHECK_FALSE(u.contains(2.001));
    auto g = u.grid(0.5);
    CHECK(g == std::vector<double>{-1.0, -0.5, 0.0, 1.0, 1.5, 2.0});
}

TEST_CASE("builtin registry") {
    CHECK(builtin_example_ids().size() == 3);
    CHECK_THROWS_AS(builtin_example("ex99"), std::invalid_argument);

    ControlProblem ex31 = builtin_example("ex31");
    CHECK(ex31.coeffs.b(0.3, 2.0, 1.5) == doctest::Approx(2.0 * 2.5));
    CHECK(ex31.coeffs.sigma(0.3, 2.0, 1.5) == doctest::Approx(3.0));
    CHECK(ex31.coeffs.f(0.1, 0.2, 0.3, 2.0, 1.5) == doctest::Approx(-3.0));
    CHECK(ex31.coeffs.phi(4.2) == doctest::Approx(4.2));
    CHECK(ex31.controls.intervals ==
          std::vector<std::pair<double, double>>{{-1.0, 0.0}, {1.0, 2.0}});

    ControlProblem ex32 = builtin_example("ex32");
    CHECK(ex32.coeffs.b(0.0, 9.9, -2.0) == doctest::Approx(-4.0));
    CHECK(ex32.coeffs.sigma(0.0, 9.9, -2.0) == doctest::Approx(-2.0));
    CHECK(ex32.coeffs.phi(0.7) == doctest::Approx(std::log(std::cosh(0.7))));
    CHECK(ex32.controls.intervals ==
          std::vector<std::pair<double, double>>{{-3.0, -2.0}, {1.0, 2.0}});

    ControlProblem ex33 = builtin_example("ex33");
    CHECK(ex33.controls.intervals ==
          std::vector<std::pair<double, double>>{{-1.0, 1.0}, {2.0, 4.0}});
    CHECK(ex33.aux->feedback_optimal(0.0, 0.5) == doctest::Approx(std::tanh(0.5)));
}

TEST_CASE("eval_G on ex31") {
    ControlProblem p = builtin_example("ex31");
    // sigma(t,x,0) = 0 and f(.,.,r,0,0) = 0, so G collapses to p*b = p*x.
    CHECK(eval_G(p, 0.3, 1.7, -0.4, 2.5, 3.0, 0.0) == doctest::Approx(2.5 * 1.7));
    // Hand composition at u = 1: 0 + 1*2 + (-1*1) = 1.
    CHECK(eval_G(p, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0) == doctest::Approx(1.0));
    CHECK_THROWS_AS(eval_G(p, 0.0, 1.0, 0.0, 1.0, 0.0, 0.5), std::domain_error);
}

TEST_CASE("eval_G matches the braced HJB supremand of ex31") {
    // G(t,x,-v,-v_x,-v_xx,u) + v_x*x must equal
    // -1/2 v_xx x^2 u^2 + u^2 v_x x - u v_x x for all samples.
    ControlProblem p = builtin_example("ex31");
    std::vector<double> xs = {-2.0, -0.3, 0.0, 0.7, 1.9};
    std::vector<double> us = {-1.0, -0.5, 0.0, 1.0, 1.7, 2.0};
    for (double x : xs) {
        for (double u : us) {
            double v = 0.37 * x - 0.2, vx = -1.21, vxx = 0.57;
            double g = eval_G(p, 0.4, x, -v, -vx, -vxx, u);
            double braced = -0.5 * vxx * x * x * u * u + u * u * vx * x - u * vx * x;
            CHECK(g + vx * x == doctest::Approx(braced).epsilon(1e-12));
        }
    }
}

TEST_CASE("eval_H at the reference point and argmax on ex31") {
    ControlProblem p = builtin_example("ex31");
    double t = 0.5, xbar = -1.3, ubar = -1.0;
    ReferencePoint ref = ReferencePoint::at(p, t, xbar, ubar);
    CHECK(ref.sigma_bar == doctest::Approx(xbar * ubar));

    // At (x, u) = (xbar, ubar) the quadratic correction vanishes.
    double y = 0.2, z = 0.4, q = 0.15, P = 2.0, pp = 0.8;
    double h = eval_H(p, t, xbar, y, z, ubar, pp, q, P, ref);
    double expected = p.coeffs.f(t, xbar, y, z, ubar) + pp * p.coeffs.b(t, xbar, ubar) +
                      q * ref.sigma_bar;
    CHECK(h == doctest::Approx(expected).epsilon(1e-12));

    // Candidate maximizers on the x < 0 branch with p = e^{s-T}, q = P = 0:
    // the argmax over U sits at {-1, 2}.
    double s = 0.5, T = p.T;
    double pbar = std::exp(s - T);
    double zbar = pbar * xbar * ubar;  // Z = -V_x sigma on this branch
    double best = -1e300;
    std::vector<double> arg;
    for (double u = -1.0; u <= 2.0 + 1e-12; u += 1e-3) {
        if (!p.controls.contains(u)) continue;
        double val = eval_H(p, s, xbar, y, zbar, u, pbar, 0.0, 0.0, ref);
        if (val > best + 1e-12) {
            best = val;
            arg = {u};
        } else if (val > best - 1e-12) {
            arg.push_back(u);
        }
    }
    REQUIRE(arg.size() >= 2);
    CHECK(std::abs(arg.front() + 1.0) < 2e-3);
    CHECK(std::abs(arg.back() - 2.0) < 2e-3);
}

TEST_CASE("eval_H maximum for ex32 closed-form adjoints at u = -2") {
    ControlProblem p = builtin_example("ex32");
    double s = 0.4, xbar = 0.6, ubar = -2.0;
    ReferencePoint ref = ReferencePoint::at(p, s, xbar, ubar);
    double pb = p.aux->p_bar(s, xbar);
    double qb = p.aux->q_bar(s, xbar);
    double Pb = p.aux->P_bar(s, xbar);
    double y = -p.aux->V(s, xbar);
    double z = std::tanh(xbar) * ubar;  // Z = -V_x sigma
    double href = eval_H(p, s, xbar, y, z, ubar, pb, qb, Pb, ref);
    for (double u = -3.0; u <= 2.0 + 1e-12; u += 1e-3) {
        if (!p.controls.contains(u)) continue;
        CHECK(eval_H(p, s, xbar, y, z, u, pb, qb, Pb, ref) <= href + 1e-10);
    }
}

TEST_CASE("eval_H1 on the three ex31 branches") {
    ControlProblem p = builtin_example("ex31");
    double T = p.T;

    // x = 0 trajectory: H1 vanishes for every admissible control.
    for (double u : {-1.0, -0.25, 0.0, 1.0, 1.5, 2.0}) {
        ReferencePoint ref = ReferencePoint::at(p, 0.5, 0.0, u);
        CHECK(eval_H1(p, 0.5, 0.0, u, std::exp(0.5 - T), 0.0, 0.0, 0.0, ref) ==
              doctest::Approx(0.0).epsilon(1e-14));
    }

    // x < 0 branch with p = e^{s-T}: H1 = -e^{s-T} X.
    for (double ubar : {-1.0, 2.0}) {
        double s = 0.3, x = -1.7;
        double pb = std::exp(s - T);
        ReferencePoint ref = ReferencePoint::at(p, s, x, ubar);
        double vtx = -std::exp(s - T) * x;
        CHECK(eval_H1(p, s, x, ubar, pb, 0.0, 0.0, vtx, ref) ==
              doctest::Approx(-std::exp(s - T) * x).epsilon(1e-12));
    }

    // x > 0 branch with p = e^{T-s}: H1 = e^{T-s} X.
    for (double ubar : {0.0, 1.0}) {
        double s = 0.7, x = 2.2;
        double pb = std::exp(T - s);
        ReferencePoint ref = ReferencePoint::at(p, s, x, ubar);
        double vtx = -std::exp(T - s) * x;
        CHECK(eval_H1(p, s, x, ubar, pb, 0.0, 0.0, vtx, ref) ==
              doctest::Approx(std::exp(T - s) * x).epsilon(1e-12));
    }
}

TEST_CASE("H1 decomposition identity against eval_G") {
    for (const auto& id : builtin_example_ids()) {
        ControlProblem p = builtin_example(id);
        std::vector<double> us = p.controls.grid(0.25);
        for (double x : {-1.1, 0.4, 1.3}) {
            for (double u : us) {
                ReferencePoint ref = ReferencePoint::at(p, 0.5, x, us.front());
                double pt = 0.7, qt = -0.3, Pt = 0.9, vtx = 0.25;
                double h1 = eval_H1(p, 0.5, x, u, pt, qt, Pt, vtx, ref);
                double sig = p.coeffs.sigma(0.5, x, u);
                double decomposed = eval_G(p, 0.5, x, -vtx, pt, Pt, u) +
                                    (qt - Pt * ref.sigma_bar) * sig;
                CHECK(h1 == doctest::Approx(decomposed).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("eval_H with P=0 and sigma_bar=0 equals eval_G plus q sigma for z=0") {
    ControlProblem p = builtin_example("ex31");
    ReferencePoint ref = ReferencePoint::at(p, 0.5, 0.0, 1.0);  // sigma(t,0,u) = 0
    REQUIRE(ref.sigma_bar == 0.0);
    for (double x : {-1.5, -0.2, 0.9}) {
        for (double u : {-1.0, 0.0, 1.0, 2.0}) {
            double y = 0.3, pp = 1.2, q = -0.45;
            double lhs = eval_H(p, 0.5, x, y, 0.0, u, pp, q, 0.0, ref);
            double rhs = eval_G(p, 0.5, x, y, pp, 0.0, u) +
                         q * p.coeffs.sigma(0.5, x, u);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
    }
}

TEST_CASE("assumption checks: builtin examples within 1e-6") {
    for (const auto& id : builtin_example_ids()) {
        SampleSpec spec;
        spec.count = 400;
        AssumptionReport rep = check_assumptions(builtin_example(id), spec);
        CAPTURE(id);
        CHECK(rep.max_rel_mismatch() <= 1e-6);
    }
}

TEST_CASE("assumption checks: quadratic terminal differentiates exactly") {
    ControlProblem p = builtin_example("ex32");
    p.coeffs.phi = [](double x) { return x * x; };
    p.coeffs.phi_x = [](double x) { return 2 * x; };
    p.coeffs.phi_xx = [](double) { return 2.0; };
    SampleSpec spec;
    spec.count = 300;
    AssumptionReport rep = check_assumptions(p, spec);
    CHECK(rep.mismatch("phi_xx") <= 1e-8);
}

TEST_CASE("assumption checks: ex31 b_x recovered to 1e-8") {
    SampleSpec spec;
    spec.count = 300;
    AssumptionReport rep = check_assumptions(builtin_example("ex31"), spec);
    CHECK(rep.mismatch("b_x") <= 1e-8);
}

TEST_CASE("expression-backed coefficients match the ex31 analytics") {
    CoefficientSet c = coefficients_from_expressions("x*(1+u)", "x*u", "-z*u", "x");
    CHECK(c.b(0.0, 2.0, 1.5) == doctest::Approx(5.0));
    CHECK(c.b_x(0.0, 2.0, 1.5) == doctest::Approx(2.5));
    CHECK(c.sigma_x(0.0, 2.0, 1.5) == doctest::Approx(1.5));
    CHECK(c.f_z(0.0, 0.0, 0.0, 0.0, 1.5) == doctest::Approx(-1.5));
    CHECK(c.phi_x(9.0) == doctest::Approx(1.0));
    Eigen::Matrix3d H = c.d2f(0.0, 0.1, 0.2, 0.3, 0.4);
    CHECK(H.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK(c.time_independent);
    CHECK(c.driver_y_free);

    ControlProblem custom;
    custom.coeffs = c;
    custom.controls = IntervalUnion::of({{-1.0, 0.0}, {1.0, 2.0}});
    custom.label = "custom-ex31";
    SampleSpec spec;
    spec.count = 200;
    CHECK(check_assumptions(custom, spec).max_rel_mismatch() <= 1e-6);
}

TEST_CASE("reference point invariant") {
    ControlProblem p = builtin_example("ex33");
    ReferencePoint ref = ReferencePoint::at(p, 0.2, 0.9, 3.0);
    CHECK(ref.sigma_bar == p.coeffs.sigma(0.2, 0.9, 3.0));
}
