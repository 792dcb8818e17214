#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "kvn/dictionary.hpp"
#include "kvn/errors.hpp"
#include "kvn/estimator.hpp"
#include "kvn/spectral.hpp"
#include "oracles.hpp"

using namespace kvn;
namespace fs = std::filesystem;

namespace {

json monomial_spec(int r) { return {{"basis", "monomial"}, {"max_degree", r}, {"taper", "conservation_law"}}; }

double rel(const Mat& a, const Mat& b) { return (a - b).norm() / b.norm(); }

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / ("kvn_unit_" + name)).string(); }

GeneratorMatrices analytic_generators() {
    GramMatrices g;
    g.G = oracle::oscillator_G();
    g.A = oracle::oscillator_A();
    g.m = 1;
    g.has_kvn = false;
    return estimate_generators(g, 1e-12);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

}  // namespace

TEST_CASE("closed-form oscillator matrices agree with the published ones") {
    ReferenceGalerkin ref = reference_oscillator_galerkin();
    CHECK((ref.G - oracle::oscillator_G()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((ref.A - oracle::oscillator_A()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((ref.Q - oracle::oscillator_Q()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single sample gives a rank-one Gram matrix") {
    auto sys = make_undamped_oscillator();
    auto dict = build_dictionary(monomial_spec(2), sys);
    Points x(2, 1);
    x << 0.2, -0.3;
    DataMatrices d = assemble_from_samples(*dict, sys.field, x);
    Vec phi = (*dict)(x.col(0));
    GramMatrices g = gram_from_data(d);
    CHECK((g.G - phi * phi.transpose()).cwiseAbs().maxCoeff() == 0.0);
    GeneratorMatrices gen = estimate_generators(d);
    CHECK(gen.rank == 1);
}

TEST_CASE("data matrix columns are basis and generator evaluations") {
    auto sys = make_lotka_volterra();
    auto dict = build_dictionary(monomial_spec(2), sys);
    Points pts = sample_uniform(sys.domain, 50, 1);
    DataMatrices d = assemble_from_samples(*dict, sys.field, pts);
    for (Eigen::Index l = 0; l < pts.cols(); ++l) {
        CHECK((d.phi.col(l) - (*dict)(pts.col(l))).norm() == 0.0);
        CHECK((d.dphi.col(l) - apply_generator(*dict, sys.field, Generator::Koopman, pts.col(l))).norm() < 1e-14);
    }
    // L f0 = 0 for the first (pure taper) basis function.
    CHECK(d.dphi.row(0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("non-finite basis values name the offending sample") {
    auto sys = make_lotka_volterra();
    auto dict = build_dictionary(monomial_spec(1), sys);
    Points pts(2, 3);
    pts << 1.0, 0.5, -1.0,  //
        1.0, 0.7, 1.0;
    try {
        assemble_from_samples(*dict, sys.field, pts);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.index() == 2);
    }
    Vec w = Vec::Constant(3, 1.0 / 3);
    CHECK_THROWS_AS(accumulate_gram(*dict, sys.field, pts, w), NonFiniteError);
}

TEST_CASE("Monte Carlo Gram estimate approaches the analytic matrix") {
    auto sys = make_undamped_oscillator();
    auto dict = build_dictionary(monomial_spec(2), sys);
    Points pts = sample_uniform(sys.domain, 100000, 3);
    Vec w = Vec::Constant(100000, 1e-5);
    GramMatrices g = accumulate_gram(*dict, sys.field, pts, w);
    const double vol = std::numbers::pi * std::sqrt(2.0);
    CHECK(rel(vol * g.G, oracle::oscillator_G()) < 0.02);
}

TEST_CASE("quadrature reproduces the analytic matrices and the invariant subspace") {
    auto sys = make_undamped_oscillator();
    auto dict = build_dictionary(monomial_spec(2), sys);
    QuadratureRule rule = midpoint_rule(sys.domain, 2000);
    GramMatrices g = accumulate_gram(*dict, sys.field, rule.points, rule.weights);
    CHECK(rel(g.G, oracle::oscillator_G()) < 1e-3);
    CHECK(rel(g.A, oracle::oscillator_A()) < 1e-3);
    GeneratorMatrices gen = estimate_generators(g, 1e-12);
    CHECK((gen.Q - oracle::oscillator_Q()).cwiseAbs().maxCoeff() < 1e-6);
    Mat skewA = 0.5 * (g.A.transpose() - g.A);
    CHECK((g.G * gen.Q - skewA).norm() / g.A.norm() < 1e-6);
}

TEST_CASE("quadrature rule: weights are cell volumes, nodes lie inside") {
    auto sys = make_undamped_oscillator();
    QuadratureRule rule = midpoint_rule(sys.domain, 400);
    const Box& b = sys.domain.box;
    const double cell = (b.upper - b.lower).prod() / (400.0 * 400.0);
    CHECK((rule.weights.array() - cell).abs().maxCoeff() < 1e-15);
    CHECK(rule.weights.sum() == doctest::Approx(std::numbers::pi * std::sqrt(2.0)).epsilon(1e-2));
    for (Eigen::Index l = 0; l < rule.points.cols(); l += 97) CHECK(sys.domain.contains(rule.points.col(l)));
    Domain empty = sys.domain;
    empty.indicator = [](VecIn) { return false; };
    CHECK_THROWS_AS(midpoint_rule(empty, 10), PreconditionError);
    CHECK_THROWS_AS(midpoint_rule(sys.domain, 1), PreconditionError);
}

TEST_CASE("Q from the analytic matrices is the integer matrix with the expected spectrum") {
    GeneratorMatrices gen = analytic_generators();
    CHECK(gen.rank == 6);
    CHECK((gen.Q - oracle::oscillator_Q()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((gen.A + gen.A.transpose()).cwiseAbs().maxCoeff() == 0.0);
    SpectrumResult sp = eig_general(gen.Q);
    std::vector<double> im;
    for (cd nu : sp.eigenvalues) {
        CHECK(std::abs(nu.real()) < 1e-10);
        im.push_back(nu.imag());
    }
    std::sort(im.begin(), im.end());
    const double r2 = std::sqrt(2.0);
    std::vector<double> expect{-2 * r2, -r2, 0, 0, r2, 2 * r2};
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(im[i] - expect[i]) < 1e-10);
}

TEST_CASE("identity Gram matrix makes Q the skew part of A") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    GramMatrices g;
    g.G = Mat::Identity(5, 5);
    g.A = Mat::NullaryExpr(5, 5, [&] { return nd(rng); });
    g.m = 1;
    g.has_kvn = false;
    GeneratorMatrices gen = estimate_generators(g);
    CHECK((gen.Q - 0.5 * (g.A.transpose() - g.A)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(skew_defect(gen.Q) < 1e-15);
    CHECK((gen.L - g.A).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((gen.Lstar - g.A.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("truncation drops small Gram eigenvalues; rank zero is an error") {
    GramMatrices g;
    g.G = Vec(Eigen::Vector3d(1.0, 1e-6, 1e-14)).asDiagonal();
    g.A = Mat::Zero(3, 3);
    g.m = 1;
    g.has_kvn = false;
    CHECK(estimate_generators(g, 1e-10).rank == 2);
    CHECK(estimate_generators(g, 1e-5).rank == 1);
    g.G.setZero();
    CHECK_THROWS_AS(estimate_generators(g), NumericalError);
}

TEST_CASE("whitening: identity Gram, exact skew symmetry, similarity") {
    GeneratorMatrices gen = analytic_generators();
    WhitenedRepresentation w = whiten(gen);
    CHECK(w.k() == 6);
    CHECK((w.T.transpose() * gen.G * w.T - Mat::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((w.Qt + w.Qt.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gen.Q * w.T - w.T * w.Qt).cwiseAbs().maxCoeff() < 1e-12);

    auto sys = make_lotka_volterra();
    auto dict = build_dictionary({{"basis", "rff"}, {"n", 100}, {"bandwidth", 0.5}, {"seed", 1}}, sys);
    Points pts = sample_uniform(sys.domain, 5000, 2);
    GeneratorMatrices g2 =
        estimate_generators(accumulate_gram(*dict, sys.field, pts, Vec::Constant(5000, 1.0 / 5000)), 1e-10);
    WhitenedRepresentation w2 = whiten(g2);
    CHECK(skew_defect(w2.Qt) < 1e-14);
    CHECK(w2.k() == g2.rank);
    CHECK((w2.T.transpose() * g2.G * w2.T - Mat::Identity(w2.k(), w2.k())).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("streaming assembly is identical for any thread count and chunk size") {
    auto sys = make_lotka_volterra();
    auto dict = build_dictionary({{"basis", "rff"}, {"n", 30}, {"bandwidth", 0.5}, {"seed", 1}}, sys);
    Points pts = sample_uniform(sys.domain, 9000, 8);
    Vec w = Vec::Constant(9000, 1.0 / 9000);
    AssemblyOptions one{1, 1000}, three{3, 1000};
    GramMatrices a = accumulate_gram(*dict, sys.field, pts, w, one);
    GramMatrices b = accumulate_gram(*dict, sys.field, pts, w, three);
    CHECK((a.G - b.G).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.A - b.A).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.C - b.C).cwiseAbs().maxCoeff() == 0.0);
    // Different chunking changes summation order only.
    GramMatrices c = accumulate_gram(*dict, sys.field, pts, w, AssemblyOptions{1, 333});
    CHECK(rel(c.G, a.G) < 1e-13);
    // Streaming and stored-data paths agree.
    GramMatrices d = gram_from_data(assemble_from_samples(*dict, sys.field, pts));
    CHECK(rel(d.G, a.G) < 1e-13);
    CHECK(rel(d.A, a.A) < 1e-13);
    CHECK(rel(d.B, a.B) < 1e-13);
    CHECK(rel(d.C, a.C) < 1e-13);
    CHECK((a.G - a.G.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trajectory snapshots: finite differences, fixed points, preconditions") {
    auto sys = make_damped_oscillator();
    auto dict = build_dictionary(monomial_spec(2), sys);
    Points x = sample_uniform(sys.domain, 2000, 4);
    Eigen::Matrix2d B;
    B << 0, 1, -2, -2;
    GramMatrices exact = gram_from_data(assemble_from_samples(*dict, sys.field, x));
    double prev = 0;
    for (double h : {1e-2, 1e-3}) {
        Points y = oracle::expm2(B, h) * x;
        DataMatrices d = assemble_from_trajectories(*dict, x, y, h);
        CHECK_FALSE(d.has_kvn);
        GramMatrices g = gram_from_data(d);
        double err = rel(g.A, exact.A);
        if (prev > 0) CHECK(err < prev / 5);
        prev = err;
    }
    CHECK(prev < 1e-2);
    DataMatrices still = assemble_from_trajectories(*dict, x, x, 0.1);
    CHECK(still.dphi.cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(assemble_from_trajectories(*dict, x, x, 0.0), PreconditionError);
}

TEST_CASE("archive round trip is bit exact") {
    auto sys = make_undamped_oscillator();
    auto dict = build_dictionary(monomial_spec(2), sys);
    Points pts = sample_uniform(sys.domain, 3000, 6);
    GeneratorMatrices gen = estimate_generators(accumulate_gram(*dict, sys.field, pts, Vec::Constant(3000, 1.0 / 3000)));
    WhitenedRepresentation w = whiten(gen);
    const std::string path = temp_path("roundtrip.kvn");
    save_matrices(gen, w, path, {{"system", "undamped_oscillator"}, {"basis", dict->description()}});
    Archive a = load_matrices(path);
    CHECK(a.gen.G == gen.G);
    CHECK(a.gen.A == gen.A);
    CHECK(a.gen.B == gen.B);
    CHECK(a.gen.C == gen.C);
    CHECK(a.gen.L == gen.L);
    CHECK(a.gen.Lstar == gen.Lstar);
    CHECK(a.gen.Q == gen.Q);
    CHECK(a.white.T == w.T);
    CHECK(a.white.Qt == w.Qt);
    CHECK(a.gen.rank == gen.rank);
    CHECK(a.gen.m == gen.m);
    CHECK(a.header["system"] == "undamped_oscillator");
    CHECK(a.header["basis"] == dict->description());
    // Saving the loaded archive reproduces the bytes.
    const std::string again = temp_path("roundtrip2.kvn");
    save_matrices(a.gen, a.white, again, {{"system", "undamped_oscillator"}, {"basis", dict->description()}});
    CHECK(slurp(path) == slurp(again));
}

TEST_CASE("malformed archives raise parse errors with offsets") {
    GeneratorMatrices gen = analytic_generators();
    WhitenedRepresentation w = whiten(gen);
    const std::string path = temp_path("bad.kvn");
    save_matrices(gen, w, path);
    const std::string good = slurp(path);

    spit(path, good.substr(0, good.size() - 5));
    try {
        load_matrices(path);
        FAIL("truncated archive accepted");
    } catch (const ParseError& e) {
        CHECK(e.offset() == good.size() - 5);
    }

    spit(path, "KVNGEN2" + good.substr(7));
    CHECK_THROWS_AS(load_matrices(path), ParseError);

    std::string bumped = good;
    auto pos = bumped.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    bumped.replace(pos, 11, "\"version\":9");
    spit(path, bumped);
    CHECK_THROWS_AS(load_matrices(path), ParseError);

    spit(path, good + "x");
    CHECK_THROWS_AS(load_matrices(path), ParseError);

    std::string broken = good;
    broken[8] = '[';
    spit(path, broken);
    CHECK_THROWS_AS(load_matrices(path), ParseError);

    CHECK_THROWS_AS(load_matrices(temp_path("does_not_exist.kvn")), PreconditionError);
}
