#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kvn/types.hpp"

namespace kvn {

// Right-hand side of x' = b(x) together with its divergence and Jacobian.
struct VectorField {
    int dim = 0;
    std::function<void(VecIn x, VecOut out)> b;
    std::function<double(VecIn x)> div_b;
    std::function<void(VecIn x, MatOut out)> jac_b;

    Vec operator()(VecIn x) const;
    Mat jacobian(VecIn x) const;
};

// Scalar function with analytic gradient. Used for conservation laws,
// level-set functions and basis tapers.
struct ScalarField {
    std::function<double(VecIn x)> value;
    std::function<void(VecIn x, VecOut out)> grad;

    double operator()(VecIn x) const { return value(x); }
    Vec gradient(VecIn x) const;
};

using ConservationLaw = ScalarField;

struct Box {
    Vec lower;
    Vec upper;

    int dim() const { return static_cast<int>(lower.size()); }
    bool contains(VecIn x) const;
    double volume() const;
};

// Open domain {g(x) < c} with an enclosing box.
struct Domain {
    std::function<bool(VecIn x)> indicator;
    Box box;
    ScalarField level;
    double level_value = 0.0;
    std::optional<double> exact_volume;

    bool contains(VecIn x) const { return indicator(x); }
};

struct BenchmarkSystem {
    std::string name;
    VectorField field;
    Domain domain;
    std::optional<ConservationLaw> law;
    std::vector<cd> reference_eigenvalues;
    std::string reference_note;

    int dim() const { return field.dim; }

    // The law when there is one, otherwise c - g(x), which vanishes on the
    // boundary but is not conserved.
    ScalarField boundary_taper() const;
};

BenchmarkSystem make_undamped_oscillator();
BenchmarkSystem make_damped_oscillator();
BenchmarkSystem make_lotka_volterra();

// Looks a system up by name; throws ConfigError for unknown names.
BenchmarkSystem make_system(const std::string& name);

// Linear system x' = Bx on the ellipse {x^T M x < c}.
BenchmarkSystem make_linear_system(const std::string& name, const Eigen::Matrix2d& B,
                                   const Eigen::Matrix2d& M, double c);

// Axis extremes of {x^T M x = c}: +-sqrt(c (M^-1)_ii), widened by pad.
Box ellipse_bounding_box(const Eigen::Matrix2d& M, double c, double pad);

// Bisection on a sign change of f in [lo, hi].
double bisect(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12);

constexpr double kDefaultStep = 1e-3;

// Classical RK4 over signed duration t with uniform steps no larger than dt.
// Throws EscapeError when the state leaves the box.
void integrate_rk4(const VectorField& field, const Box& box, VecOut x, double t, double dt);

Vec flow(const BenchmarkSystem& sys, VecIn x0, double t, double dt = kDefaultStep);

struct SampleResult {
    Points points;
    std::uint64_t proposals = 0;
    double acceptance_rate() const;
};

// Samples are drawn in fixed blocks of kSampleBlock accepted points; block j
// uses an mt19937_64 seeded with seed_seq{seed, j}. The output does not depend
// on how blocks are scheduled.
constexpr std::size_t kSampleBlock = 4096;

SampleResult sample_uniform_stats(const Domain& domain, std::size_t m, std::uint64_t seed);
Points sample_uniform(const Domain& domain, std::size_t m, std::uint64_t seed);

// Rejection sampling of an unnormalized density bounded by `bound` on the domain.
Points sample_density(const Domain& domain, const std::function<double(VecIn)>& density,
                      double bound, std::size_t m, std::uint64_t seed);

// Domain volume: exact when known, otherwise box volume times acceptance rate
// of `m` uniform box proposals.
double domain_volume(const Domain& domain, std::size_t m = 1000000, std::uint64_t seed = 0);

void write_points_csv(const std::string& path, const Points& points);

}  // namespace kvn
