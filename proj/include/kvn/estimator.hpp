#pragma once

#include <cstddef>
#include <string>

#include "kvn/dictionary.hpp"
#include "kvn/systems.hpp"
#include "kvn/types.hpp"

namespace kvn {

constexpr double kDefaultTruncation = 1e-10;

// Basis data at m states. Columns are samples.
struct DataMatrices {
    Mat phi;   // phi(x_l)
    Mat dphi;  // (L phi)(x_l), or grad phi . (finite-difference velocity)
    Mat qphi;  // (Q phi)(x_l); empty when has_kvn is false
    Vec weights;
    std::size_t m = 0;
    bool has_kvn = true;
};

// Weighted second moments: G = sum w phi phi^T, A = sum w phi dphi^T,
// B = sum w phi qphi^T, C = sum w qphi qphi^T.
struct GramMatrices {
    Mat G, A, B, C;
    std::size_t m = 0;
    bool has_kvn = true;
};

struct GeneratorMatrices {
    Mat G;      // Gram matrix
    Mat A;      // stiffness <phi_i, L phi_j>
    Mat B;      // KvN cross matrix <phi_i, Q phi_j>
    Mat C;      // <Q phi_i, Q phi_j>
    Mat L;      // G^+ A
    Mat Lstar;  // G^+ A^T
    Mat Q;      // 1/2 G^+ (A^T - A)
    int rank = 0;
    double truncation = kDefaultTruncation;
    std::size_t m = 0;

    int n() const { return static_cast<int>(G.rows()); }
    bool has_kvn() const { return C.size() > 0; }
};

struct WhitenedRepresentation {
    Mat T;   // n x k
    Mat Qt;  // k x k, skew-symmetric
    double eig_threshold = kDefaultTruncation;

    int k() const { return static_cast<int>(Qt.rows()); }
};

struct QuadratureRule {
    Points points;
    Vec weights;
};

struct AssemblyOptions {
    int threads = 0;  // 0: use the process-wide default
    std::size_t chunk = 2048;
};

// Process-wide worker cap for assembly (the CLI sets it from --threads).
void set_thread_count(int threads);
int thread_count();

DataMatrices assemble_from_samples(const Dictionary& dict, const VectorField& field, const Points& points);

// Snapshot pairs as two d x m matrices (x_t and x_{t+h}).
DataMatrices assemble_from_trajectories(const Dictionary& dict, const Points& x, const Points& x_next, double h);

DataMatrices assemble_by_quadrature(const Dictionary& dict, const VectorField& field, const Domain& domain,
                                    int grid_per_dim);

// Tensor midpoint nodes of the bounding box that fall inside the domain,
// weighted by cell volume.
QuadratureRule midpoint_rule(const Domain& domain, int grid_per_dim);

// Streams over points in fixed chunks without storing the n x m data. Chunk
// partial sums are added in chunk order, so the result does not depend on the
// number of threads.
GramMatrices accumulate_gram(const Dictionary& dict, const VectorField& field, const Points& points,
                             const Vec& weights, const AssemblyOptions& opts = {});

GramMatrices gram_from_data(const DataMatrices& data);

GeneratorMatrices estimate_generators(const DataMatrices& data, double truncation = kDefaultTruncation);
GeneratorMatrices estimate_generators(const GramMatrices& gram, double truncation = kDefaultTruncation);

// Retained eigenpairs of G above truncation * lambda_max.
struct GramSpectrum {
    Vec values;
    Mat vectors;
};
GramSpectrum gram_spectrum(const Mat& G, double truncation);

WhitenedRepresentation whiten(const GeneratorMatrices& gen);

double skew_defect(const Mat& M);
// lambda_max / lambda_min over the retained Gram eigenvalues.
double gram_condition(const GeneratorMatrices& gen);

// Unnormalized Galerkin matrices of the undamped oscillator for the degree-2
// tapered monomial basis (closed-form integrals over the ellipse).
struct ReferenceGalerkin {
    Mat G, A, Q;
};
ReferenceGalerkin reference_oscillator_galerkin();

struct Archive {
    GeneratorMatrices gen;
    WhitenedRepresentation white;
    json header;
};

constexpr int kArchiveVersion = 1;

// Header fields supplied by the caller (basis description, system name) are
// merged into the archive header.
void save_matrices(const GeneratorMatrices& gen, const WhitenedRepresentation& white, const std::string& path,
                   const json& meta = json::object());
Archive load_matrices(const std::string& path);

}  // namespace kvn
