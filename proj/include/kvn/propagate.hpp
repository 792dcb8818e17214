#pragma once

#include <functional>
#include <memory>
#include <string>

#include "kvn/dictionary.hpp"
#include "kvn/estimator.hpp"
#include "kvn/systems.hpp"
#include "kvn/types.hpp"

namespace kvn {

using WhiteningPtr = std::shared_ptr<const WhitenedRepresentation>;
using ComplexFunction = std::function<cd(VecIn)>;
using RealFunction = std::function<double(VecIn)>;

struct Wavefunction {
    CVec coeffs;  // whitened coordinates, length k
    WhiteningPtr white;
    DictionaryPtr dict;
    double time = 0.0;

    // Coefficients with respect to the original dictionary, T c.
    CVec original_coeffs() const;
    cd value(VecIn x) const;
    CVec values(const Points& points) const;
};

// exp(t Qt) through the cached Hermitian eigendecomposition i Qt = U diag(h) U*.
class Propagator {
public:
    explicit Propagator(const Mat& Qt);

    CVec apply(const CVec& c, double dt) const;
    Wavefunction evolve(const Wavefunction& psi, double dt) const;
    CMat matrix(double t) const;
    const Vec& frequencies() const { return h_; }

private:
    CMat U_;
    Vec h_;
};

Wavefunction evolve(const Wavefunction& psi, double dt);

struct FitResult {
    Wavefunction psi;
    double relative_residual = 0.0;
    int rank = 0;
};

// Least squares over the points in whitened coordinates, solved through the
// normal equations with the given relative eigenvalue truncation.
FitResult fit_wavefunction(DictionaryPtr dict, WhiteningPtr white, const ComplexFunction& target,
                           const Points& points, double truncation = kDefaultTruncation);

enum class EscapePolicy {
    Throw,  // EscapeError once the backward trajectory leaves the bounding box
    Zero,   // return 0 once the backward trajectory leaves the domain
};

struct CharacteristicOptions {
    double dt = kDefaultStep;
    EscapePolicy policy = EscapePolicy::Throw;
};

// psi0(Phi^{-t} x) * exp(-1/2 int_0^t div b(Phi^{s-t} x) ds) by backward RK4
// on the state augmented with the accumulated divergence.
cd characteristic_solution(const BenchmarkSystem& sys, const ComplexFunction& psi0, VecIn x, double t,
                           const CharacteristicOptions& opts = {});

struct DensityField {
    Points points;
    Vec values;
    double mass = 0.0;
};

// rho = |psi|^2; mass is the weighted sum (zero when no weights are given).
DensityField born_density(const Wavefunction& psi, const Points& points, const Vec& weights = Vec());

// int |psi|^2 f / int |psi|^2 with the given quadrature weights.
double expectation(const Wavefunction& psi, const RealFunction& f, const Points& points, const Vec& weights);

using Sampler = std::function<Points(std::size_t count)>;

Points particle_ensemble(const BenchmarkSystem& sys, const Points& initial, double t, double dt = kDefaultStep);
Points particle_ensemble(const BenchmarkSystem& sys, const Sampler& density0, std::size_t count, double t,
                         double dt = kDefaultStep);

// Sum of isotropic Gaussians exp(-|x - mu|^2 / (2 s^2)).
ComplexFunction gaussian_superposition(const std::vector<Vec>& centers, double bandwidth);

// Snapshot CSV x1,x2,re_psi,im_psi,rho on a grid x grid lattice over the box;
// nodes outside the domain keep empty value fields.
void write_snapshot_csv(const std::string& path, const Wavefunction& psi, const Domain& domain, int grid);

// "{name}_t{t with three decimals}.csv"
std::string snapshot_filename(const std::string& name, double t);

}  // namespace kvn
