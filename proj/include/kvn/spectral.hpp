#pragma once

#include <string>
#include <vector>

#include "kvn/dictionary.hpp"
#include "kvn/estimator.hpp"
#include "kvn/types.hpp"

namespace kvn {

enum class Coordinates { Whitened, Original };

struct SpectrumResult {
    std::vector<cd> eigenvalues;
    CMat eigenvectors;  // one column per eigenvalue, unit Euclidean norm
    std::vector<double> residuals;
    Coordinates coordinates = Coordinates::Original;
    json basis_ref;

    std::size_t size() const { return eigenvalues.size(); }
};

constexpr double kDefaultResidualThreshold = 1e-2;

// Eigenpairs of a skew-symmetric matrix through the Hermitian matrix i*Qt.
// Eigenvalues are paired so the set is exactly closed under negation and
// sorted by |Im| ascending, positive imaginary part first.
SpectrumResult eig_skew(const Mat& Qt, double tol = 1e-10);

// Dense nonsymmetric eigensolver. Sorted by real part descending, then |Im|
// ascending, positive imaginary part first; conjugate pairs stay adjacent.
SpectrumResult eig_general(const Mat& M, int max_iterations = 0);

// sqrt(Re[v*(C - conj(nu) B - nu B^T + |nu|^2 G) v] / v*Gv) for v in original
// coordinates.
double residual_score(const GeneratorMatrices& gen, cd nu, const CVec& v);

// Fills spec.residuals. Whitened eigenvectors are mapped through white.T.
void score_spectrum(SpectrumResult& spec, const GeneratorMatrices& gen, const WhitenedRepresentation* white);

// Eigenpairs of the KvN Galerkin matrix T^T B T built directly from the KvN
// columns, mapped back to original coordinates and scored.
SpectrumResult kvn_direct_spectrum(const GeneratorMatrices& gen, const WhitenedRepresentation& white);

SpectrumResult filter_spectrum(const SpectrumResult& spec, double threshold);

// Coefficients of eigenvector j in original coordinates.
CVec original_coefficients(const SpectrumResult& spec, const WhitenedRepresentation* white, std::size_t j);

CVec eigenfunction_values(const SpectrumResult& spec, const Dictionary& dict, const WhitenedRepresentation* white,
                          std::size_t j, const Points& points);

void write_spectrum_csv(const std::string& path, const SpectrumResult& spec);

// Grid of grid x grid nodes over the box; rows outside the domain keep
// empty value fields.
void write_eigenfunction_csv(const std::string& path, const SpectrumResult& spec, const Dictionary& dict,
                             const WhitenedRepresentation* white, std::size_t j, const Domain& domain, int grid);

}  // namespace kvn
