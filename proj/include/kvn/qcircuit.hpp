#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kvn/types.hpp"

namespace kvn {

// Qt in block coordinates: P S Qt S P^T = diag({{0,-a},{a,0}}, arrowhead(z)),
// where P permutes Qt coordinates and S = diag(signs).
struct BlockStructure {
    double a = 0.0;
    std::array<double, 3> z{};
    // permutation[b] = Qt index placed at block coordinate b. Block
    // coordinates 0,1 hold the 2x2 block; 2 is the arrowhead hub, 3..5 its
    // leaves.
    std::array<int, 6> permutation{};
    // +-1 per Qt coordinate; -1 marks a flipped whitened basis vector.
    std::array<double, 6> signs{1, 1, 1, 1, 1, 1};
    double tolerance = 0.0;

    Eigen::Matrix2d two_block() const;
    Eigen::Matrix4d arrow_block() const;
    // 6x6 permutation-with-signs matrix R with R Qt R^T = block form.
    Eigen::Matrix<double, 6, 6> transform() const;
};

enum class GateKind { Ry, CRy, X };

struct Gate {
    GateKind kind = GateKind::Ry;
    int target = 0;
    std::optional<int> control;
    double angle = 0.0;

    bool operator==(const Gate& o) const = default;
};

// Gates in application order. Qubit q[0] is the most significant bit.
struct GateList {
    int num_qubits = 1;
    std::vector<Gate> gates;

    bool operator==(const GateList& o) const = default;
};

struct ArrowAngles {
    double theta = 0.0;
    double phi = 0.0;
    double beta = 0.0;
    double r = 0.0;
    double s = 0.0;
};

// Finds the 2+4 split of a 6x6 skew matrix. Entries with magnitude <= tol
// count as zero; leaves are signed so that z_i > 0.
BlockStructure detect_structure(const Mat& Qt, double tol);

ArrowAngles arrow_angles(const std::array<double, 3>& z, double t);

// First list: Ry(2 a t) on one qubit. Second: the seven-gate circuit for
// exp(t * arrowhead(z)).
std::pair<GateList, GateList> decompose(const BlockStructure& blocks, double t);
GateList arrow_circuit(const std::array<double, 3>& z, double t);

Mat simulate(const GateList& gates);

// Closed form I + sin(rt)/r A + (1 - cos(rt))/r^2 A^2 for the arrowhead.
Eigen::Matrix4d arrow_exponential(const std::array<double, 3>& z, double t);

// Maps the two sub-circuit unitaries back to Qt coordinates.
Mat assemble_propagator(const BlockStructure& blocks, const Mat& two, const Mat& four);

struct CircuitHeader {
    double t = 0.0;
    double a = 0.0;
    std::array<double, 3> z{};
};

enum class CircuitFormat { Text, QasmLite };

std::string circuit_to_string(const GateList& gates, const CircuitHeader& header,
                              CircuitFormat format = CircuitFormat::Text);
void export_circuit(const GateList& gates, const std::string& path, const CircuitHeader& header,
                    CircuitFormat format = CircuitFormat::Text);
GateList parse_circuit(const std::string& text);
GateList load_circuit(const std::string& path);

}  // namespace kvn
