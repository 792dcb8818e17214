#include <doctest.h>

#include <cmath>
#include <numbers>

#include "kvn/errors.hpp"
#include "kvn/systems.hpp"
#include "oracles.hpp"

using namespace kvn;

namespace {
Vec v2(double a, double b) { return Eigen::Vector2d(a, b); }
}  // namespace

TEST_CASE("undamped oscillator field, divergence and law") {
    auto sys = make_undamped_oscillator();
    CHECK(sys.name == "undamped_oscillator");
    Vec b = sys.field(v2(1, 0));
    CHECK(b[0] == 0.0);
    CHECK(b[1] == -2.0);
    CHECK(sys.field.div_b(v2(0.3, -0.7)) == 0.0);
    REQUIRE(sys.law);
    CHECK(sys.law->value(v2(0, 0)) == 1.0);
    CHECK(sys.domain.box.lower[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(sys.domain.box.upper[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("damped oscillator field and bounding box from a Lagrange sweep") {
    auto sys = make_damped_oscillator();
    Vec b = sys.field(v2(0, 1));
    CHECK(b[0] == 1.0);
    CHECK(b[1] == -2.0);
    CHECK(sys.field.div_b(v2(0.2, 0.1)) == -2.0);
    CHECK_FALSE(sys.law.has_value());
    Eigen::Matrix2d M;
    M << 1, 0.5, 0.5, 0.5;
    for (int i = 0; i < 2; ++i) {
        double ext = oracle::ellipse_axis_extreme(M, 1.0, i);
        CHECK(sys.domain.box.upper[i] == doctest::Approx(ext + 1e-12).epsilon(1e-10));
        CHECK(sys.domain.box.lower[i] == doctest::Approx(-ext - 1e-12).epsilon(1e-10));
    }
    REQUIRE(sys.reference_eigenvalues.size() == 2);
    CHECK(std::abs(sys.reference_eigenvalues[0] - cd(-1, 1)) < 1e-15);
}

TEST_CASE("Lotka-Volterra field, divergence and box roots") {
    auto sys = make_lotka_volterra();
    Vec b = sys.field(v2(1, 1));
    CHECK(b.norm() == 0.0);
    CHECK(sys.field.div_b(v2(2, 0.5)) == doctest::Approx(1.5));
    const double lo = oracle::lv_root(0.1), hi = oracle::lv_root(4.0);
    for (int i = 0; i < 2; ++i) {
        CHECK(std::abs(sys.domain.box.lower[i] - lo) < 1e-9);
        CHECK(std::abs(sys.domain.box.upper[i] - hi) < 1e-9);
        CHECK(sys.domain.box.lower[i] <= lo);
        CHECK(sys.domain.box.upper[i] >= hi);
    }
    CHECK_FALSE(sys.domain.contains(v2(-1, 1)));
    CHECK_FALSE(sys.domain.contains(v2(1, 0)));
}

TEST_CASE("make_system rejects unknown names") {
    CHECK(make_system("lotka_volterra").name == "lotka_volterra");
    CHECK_THROWS_AS(make_system("pendulum"), ConfigError);
}

TEST_CASE("divergence equals Jacobian trace; conservation laws are conserved") {
    for (const char* name : {"undamped_oscillator", "damped_oscillator", "lotka_volterra"}) {
        auto sys = make_system(name);
        Points pts = sample_uniform(sys.domain, 1000, 7);
        for (Eigen::Index l = 0; l < pts.cols(); ++l) {
            Vec x = pts.col(l);
            CHECK(std::abs(sys.field.div_b(x) - sys.field.jacobian(x).trace()) < 1e-10);
            if (sys.law) CHECK(std::abs(sys.field(x).dot(sys.law->gradient(x))) < 1e-10);
        }
    }
}

TEST_CASE("linear systems are exactly b = Bx") {
    auto sys = make_damped_oscillator();
    Eigen::Matrix2d B;
    B << 0, 1, -2, -2;
    Points pts = sample_uniform(sys.domain, 100, 3);
    for (Eigen::Index l = 0; l < pts.cols(); ++l) {
        Vec x = pts.col(l);
        CHECK((sys.field(x) - B * x).norm() == 0.0);
    }
}

TEST_CASE("flow: period, identity, decay and agreement with exp(Bt)") {
    auto osc = make_undamped_oscillator();
    Vec x = flow(osc, v2(0.999999, 0), 2 * std::numbers::pi / std::sqrt(2.0));
    CHECK((x - v2(0.999999, 0)).norm() < 1e-6);
    Vec x0 = v2(0.3, -0.2);
    CHECK((flow(osc, x0, 0.0) - x0).norm() == 0.0);

    auto damped = make_damped_oscillator();
    Vec y = flow(damped, v2(0.5, 0), 10.0);
    CHECK(y.norm() < 1e-4);
    Eigen::Matrix2d B;
    B << 0, 1, -2, -2;
    Vec ref = oracle::expm2(B, 1.7) * Eigen::Vector2d(0.5, 0.1);
    CHECK((flow(damped, v2(0.5, 0.1), 1.7) - ref).norm() < 1e-11);
    // Fourth order: halving dt cuts the error by about 16.
    double e1 = (flow(damped, v2(0.5, 0.1), 1.7, 0.1) - ref).norm();
    double e2 = (flow(damped, v2(0.5, 0.1), 1.7, 0.05) - ref).norm();
    CHECK(e1 / e2 > 12.0);
    CHECK(e1 / e2 < 20.0);
}

TEST_CASE("flow rejects starting points outside the domain") {
    auto osc = make_undamped_oscillator();
    CHECK_THROWS_AS(flow(osc, v2(2, 0), 1.0), PreconditionError);
}

TEST_CASE("integrate_rk4 reports escape from the box") {
    VectorField drift;
    drift.dim = 1;
    drift.b = [](VecIn, VecOut out) { out[0] = 1.0; };
    drift.div_b = [](VecIn) { return 0.0; };
    drift.jac_b = [](VecIn, MatOut out) { out.setZero(); };
    Box box{Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
    Vec x = Vec::Zero(1);
    CHECK_THROWS_AS(integrate_rk4(drift, box, x, 5.0, 0.01), EscapeError);
}

TEST_CASE("Lotka-Volterra conserves its law along trajectories") {
    auto sys = make_lotka_volterra();
    Vec x0 = v2(0.6, 0.8);
    const double f = sys.law->value(x0);
    Vec x = x0;
    for (int s = 1; s <= 7; ++s) {
        x = flow(sys, x, 1.0);
        CHECK(std::abs(sys.law->value(x) - f) < 1e-8);
    }
}

TEST_CASE("forward invariance of the domains") {
    struct Case {
        const char* name;
        double t;
    };
    for (Case c : {Case{"undamped_oscillator", 10.0}, Case{"damped_oscillator", 10.0}, Case{"lotka_volterra", 7.0}}) {
        auto sys = make_system(c.name);
        Points pts = sample_uniform(sys.domain, 100, 11);
        for (Eigen::Index l = 0; l < pts.cols(); ++l) {
            Vec x = flow(sys, pts.col(l), c.t);
            CHECK(sys.domain.level.value(x) - sys.domain.level_value < 1e-6);
        }
    }
}

TEST_CASE("uniform sampling: symmetry, acceptance rate, determinism") {
    auto sys = make_undamped_oscillator();
    SampleResult r = sample_uniform_stats(sys.domain, 100000, 42);
    REQUIRE(r.points.cols() == 100000);
    Vec mean = r.points.rowwise().mean();
    Vec sd = ((r.points.colwise() - mean).array().square().rowwise().sum() / 99999.0).sqrt();
    for (int i = 0; i < 2; ++i) CHECK(std::abs(mean[i]) < 3 * sd[i] / std::sqrt(100000.0));
    CHECK(std::abs(r.acceptance_rate() - std::numbers::pi / 4) < 0.01);
    for (Eigen::Index l = 0; l < r.points.cols(); ++l) {
        if (!sys.domain.contains(r.points.col(l))) {
            FAIL("sample outside the domain");
            break;
        }
    }
    Points again = sample_uniform(sys.domain, 100000, 42);
    CHECK((again - r.points).norm() == 0.0);
    Points other = sample_uniform(sys.domain, 100, 43);
    CHECK((other - r.points.leftCols(100)).norm() > 0.0);
}

TEST_CASE("sampling prefix property: fewer points are a prefix of more") {
    auto sys = make_lotka_volterra();
    Points a = sample_uniform(sys.domain, 5000, 5);
    Points b = sample_uniform(sys.domain, 10000, 5);
    CHECK((b.leftCols(5000) - a).norm() == 0.0);
}

TEST_CASE("sampling aborts on a degenerate domain") {
    auto sys = make_undamped_oscillator();
    Domain empty = sys.domain;
    empty.indicator = [](VecIn) { return false; };
    CHECK_THROWS_AS(sample_uniform(empty, 10, 1), PreconditionError);
    CHECK_THROWS_AS(sample_uniform(sys.domain, 0, 1), PreconditionError);
}

TEST_CASE("domain volume matches the exact ellipse area and Monte Carlo") {
    auto osc = make_undamped_oscillator();
    CHECK(domain_volume(osc.domain) == doctest::Approx(std::numbers::pi * std::sqrt(2.0)));
    Domain noexact = osc.domain;
    noexact.exact_volume.reset();
    CHECK(std::abs(domain_volume(noexact, 1000000, 3) - std::numbers::pi * std::sqrt(2.0)) < 0.01);
}

TEST_CASE("bisection finds the Lotka-Volterra roots") {
    auto h = [](double x) { return 1 + x - std::log(x) - 3; };
    CHECK(std::abs(bisect(h, 1e-6, 1.0) - oracle::lv_root(0.1)) < 1e-11);
    CHECK(std::abs(bisect(h, 1.0, 10.0) - oracle::lv_root(4.0)) < 1e-11);
}
