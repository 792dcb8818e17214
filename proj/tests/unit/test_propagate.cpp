#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "kvn/dictionary.hpp"
#include "kvn/errors.hpp"
#include "kvn/estimator.hpp"
#include "kvn/propagate.hpp"
#include "oracles.hpp"

using namespace kvn;
namespace fs = std::filesystem;

namespace {

const double kPeriod = 2 * std::numbers::pi / std::sqrt(2.0);

struct Analytic {
    BenchmarkSystem sys = make_undamped_oscillator();
    DictionaryPtr dict;
    WhiteningPtr white;
};

// Degree-2 tapered monomials whitened with the closed-form Gram matrix.
const Analytic& analytic() {
    static const Analytic a = [] {
        Analytic x;
        x.dict = build_dictionary({{"basis", "monomial"}, {"max_degree", 2}, {"taper", "conservation_law"}}, x.sys);
        GramMatrices g{oracle::oscillator_G(), oracle::oscillator_A(), Mat(), Mat(), 1, false};
        x.white = std::make_shared<WhitenedRepresentation>(whiten(estimate_generators(g, 1e-12)));
        return x;
    }();
    return a;
}

// f0 (1 + x1 - 0.5 x2 + x1 x2): inside the invariant span.
cd span_state(VecIn x) {
    double f0 = 1 - x[0] * x[0] - 0.5 * x[1] * x[1];
    return {f0 * (1 + x[0] - 0.5 * x[1] + x[0] * x[1]), 0.0};
}

Wavefunction fitted_span_state() {
    const Analytic& a = analytic();
    Points pts = sample_uniform(a.sys.domain, 2000, 31);
    return fit_wavefunction(a.dict, a.white, span_state, pts).psi;
}

CVec random_cvec(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    CVec c(n);
    for (int i = 0; i < n; ++i) c[i] = cd(nd(rng), nd(rng));
    return c;
}

}  // namespace

TEST_CASE("propagator is unitary and periodic") {
    const Analytic& a = analytic();
    Propagator prop(a.white->Qt);
    CVec c = random_cvec(6, 1);
    for (double dt : {0.1, 1.3, -2.7, 40.0}) CHECK(std::abs(prop.apply(c, dt).norm() - c.norm()) < 1e-12 * c.norm());
    CHECK((prop.apply(c, 0.0) - c).norm() == 0.0);
    CHECK((prop.apply(c, kPeriod) - c).norm() < 1e-10);
    CMat U = prop.matrix(0.7);
    CHECK((U.adjoint() * U - CMat::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-13);
    // Real generator, real propagator.
    CHECK(U.imag().cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("norm drift over many small steps") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    Mat M = Mat::NullaryExpr(20, 20, [&] { return nd(rng); });
    Propagator prop(0.5 * (M - M.transpose()));
    CVec c = random_cvec(20, 2);
    const double n0 = c.norm();
    for (int s = 0; s < 10000; ++s) c = prop.apply(c, 1e-2);
    CHECK(std::abs(c.norm() - n0) < 1e-9 * n0);
}

TEST_CASE("evolve advances time and matches repeated steps") {
    Wavefunction psi = fitted_span_state();
    Wavefunction one = evolve(psi, 1.0);
    CHECK(one.time == doctest::Approx(1.0));
    Wavefunction two = evolve(evolve(psi, 0.4), 0.6);
    CHECK((one.coeffs - two.coeffs).norm() < 1e-13);
    CHECK_THROWS_AS(evolve(psi, std::numeric_limits<double>::infinity()), PreconditionError);
}

TEST_CASE("fitting: whitened basis functions and span members are exact") {
    const Analytic& a = analytic();
    Points pts = sample_uniform(a.sys.domain, 500, 8);
    auto first = [&](VecIn x) { return cd((a.white->T.transpose() * (*a.dict)(x))[0], 0.0); };
    FitResult f = fit_wavefunction(a.dict, a.white, first, pts);
    CVec e1 = CVec::Zero(6);
    e1[0] = 1;
    CHECK((f.psi.coeffs - e1).norm() < 1e-10);
    CHECK(f.relative_residual < 1e-10);
    FitResult g = fit_wavefunction(a.dict, a.white, span_state, pts);
    CHECK(g.relative_residual < 1e-8);
    CHECK(g.rank == 6);
    Points few = pts.leftCols(3);
    CHECK_THROWS_AS(fit_wavefunction(a.dict, a.white, span_state, few), PreconditionError);
    // Six points on a line cannot determine six coefficients.
    Points line(2, 10);
    for (int l = 0; l < 10; ++l) line.col(l) = Eigen::Vector2d(0.05 * l, 0.0);
    CHECK_THROWS_AS(fit_wavefunction(a.dict, a.white, span_state, line), NumericalError);
}

TEST_CASE("characteristic solution: identity, Hamiltonian transport, constant divergence") {
    auto osc = make_undamped_oscillator();
    auto g = gaussian_superposition({Eigen::Vector2d(0.3, 0.1)}, 0.2);
    Vec x = Eigen::Vector2d(0.2, -0.4);
    CHECK(characteristic_solution(osc, g, x, 0.0) == g(x));
    Vec back = flow(osc, x, -1.3);
    CHECK(std::abs(characteristic_solution(osc, g, x, 1.3) - g(back)) < 1e-12);

    auto damped = make_damped_oscillator();
    Eigen::Matrix2d B;
    B << 0, 1, -2, -2;
    Vec y = Eigen::Vector2d(0.1, 0.05);
    for (double t : {0.1, 0.3, 0.5}) {
        Vec pre = oracle::expm2(B, -t) * y;
        cd expect = g(pre) * std::exp(t);
        CHECK(std::abs(characteristic_solution(damped, g, y, t) - expect) < 1e-10 * std::abs(expect));
    }
}

TEST_CASE("characteristic escape policies") {
    auto damped = make_damped_oscillator();
    auto g = gaussian_superposition({Eigen::Vector2d(0.0, 0.0)}, 0.2);
    Vec edge = Eigen::Vector2d(0.95, 0.0);
    CHECK_THROWS_AS(characteristic_solution(damped, g, edge, 3.0), EscapeError);
    CharacteristicOptions zero;
    zero.policy = EscapePolicy::Zero;
    CHECK(characteristic_solution(damped, g, edge, 3.0, zero) == cd(0, 0));
}

TEST_CASE("evolve agrees with characteristics on the invariant subspace") {
    const Analytic& a = analytic();
    Wavefunction psi0 = fitted_span_state();
    Points pts = sample_uniform(a.sys.domain, 1000, 77);
    Propagator prop(a.white->Qt);
    for (double t : {0.5, 1.0, kPeriod}) {
        Wavefunction psi = prop.evolve(psi0, t);
        double worst = 0;
        for (Eigen::Index l = 0; l < pts.cols(); ++l)
            worst = std::max(worst, std::abs(psi.value(pts.col(l)) - characteristic_solution(a.sys, span_state, pts.col(l), t)));
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("Born density: zero state, positivity, mass conservation") {
    const Analytic& a = analytic();
    QuadratureRule rule = midpoint_rule(a.sys.domain, 500);
    Wavefunction zero{CVec::Zero(6), a.white, a.dict, 0.0};
    DensityField z = born_density(zero, rule.points, rule.weights);
    CHECK(z.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.mass == 0.0);
    Wavefunction psi0 = fitted_span_state();
    DensityField d0 = born_density(psi0, rule.points, rule.weights);
    CHECK(d0.values.minCoeff() >= 0.0);
    for (double t : {0.5, 1.0, 2.0}) {
        DensityField dt = born_density(evolve(psi0, t), rule.points, rule.weights);
        CHECK(std::abs(dt.mass - d0.mass) < 1e-3 * d0.mass);
    }
}

TEST_CASE("expectation: constant observable and the particle picture") {
    const Analytic& a = analytic();
    QuadratureRule rule = midpoint_rule(a.sys.domain, 400);
    Wavefunction psi0 = fitted_span_state();
    CHECK(expectation(psi0, [](VecIn) { return 1.0; }, rule.points, rule.weights) == doctest::Approx(1.0).epsilon(1e-14));

    auto rho0 = [](VecIn x) { return std::norm(span_state(x)); };
    Points particles = sample_density(a.sys.domain, rho0, 4.0, 100000, 5);
    auto obs = [&](VecIn x) { return a.sys.law->value(x) * x[0]; };
    double t_prev = 0.0;
    for (double t : {0.0, 1.0, 2.0}) {
        particles = particle_ensemble(a.sys, particles, t - t_prev, 1e-2);
        t_prev = t;
        double mean = 0;
        for (Eigen::Index l = 0; l < particles.cols(); ++l) mean += obs(particles.col(l));
        mean /= static_cast<double>(particles.cols());
        double q = expectation(evolve(psi0, t), obs, rule.points, rule.weights);
        CHECK(std::abs(q - mean) < 2e-2);
    }
}

TEST_CASE("particle ensembles: identity, conservation, decay") {
    auto lv = make_lotka_volterra();
    Points p0 = sample_uniform(lv.domain, 200, 3);
    CHECK((particle_ensemble(lv, p0, 0.0) - p0).norm() == 0.0);
    Points p7 = particle_ensemble(lv, p0, 7.0);
    for (Eigen::Index l = 0; l < p0.cols(); ++l)
        CHECK(std::abs(lv.law->value(p7.col(l)) - lv.law->value(p0.col(l))) < 1e-6);

    auto damped = make_damped_oscillator();
    Sampler s = [&](std::size_t n) { return sample_uniform(damped.domain, n, 9); };
    Points late = particle_ensemble(damped, s, 500, 8.0);
    CHECK(late.rowwise().mean().norm() < 1e-3);
}

TEST_CASE("snapshot files: names and out-of-domain rows") {
    CHECK(snapshot_filename("lv", 2.0) == "lv_t2.000.csv");
    CHECK(snapshot_filename("osc", 0.1234) == "osc_t0.123.csv");
    Wavefunction psi0 = fitted_span_state();
    const std::string path = (fs::temp_directory_path() / "kvn_unit_snapshot.csv").string();
    write_snapshot_csv(path, psi0, analytic().sys.domain, 11);
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::getline(in, line);
    CHECK(line == "x1,x2,re_psi,im_psi,rho");
    int rows = 0, empty = 0;
    while (std::getline(in, line)) {
        ++rows;
        if (line.size() >= 3 && line.substr(line.size() - 3) == ",,,") ++empty;
    }
    CHECK(rows == 121);
    // The box corners lie outside the ellipse.
    CHECK(empty >= 4);
    CHECK(empty < rows);
}

TEST_CASE("Gaussian superposition uses exp(-|x - mu|^2 / (2 s^2))") {
    auto g = gaussian_superposition({Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(-0.5, 0.0)}, 0.3);
    Vec x = Eigen::Vector2d(0.2, 0.1);
    double expect = std::exp(-(0.09 + 0.16) / 0.18) + std::exp(-(0.49 + 0.01) / 0.18);
    CHECK(std::abs(g(x) - cd(expect, 0)) < 1e-15);
}
