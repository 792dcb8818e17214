#include "kvn/qcircuit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "kvn/errors.hpp"
#include "kvn/io.hpp"

namespace kvn {

Eigen::Matrix2d BlockStructure::two_block() const {
    Eigen::Matrix2d m;
    m << 0.0, -a, a, 0.0;
    return m;
}

Eigen::Matrix4d BlockStructure::arrow_block() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    for (int i = 0; i < 3; ++i) {
        m(0, i + 1) = -z[static_cast<std::size_t>(i)];
        m(i + 1, 0) = z[static_cast<std::size_t>(i)];
    }
    return m;
}

Eigen::Matrix<double, 6, 6> BlockStructure::transform() const {
    Eigen::Matrix<double, 6, 6> R = Eigen::Matrix<double, 6, 6>::Zero();
    for (int b = 0; b < 6; ++b) {
        int q = permutation[static_cast<std::size_t>(b)];
        R(b, q) = signs[static_cast<std::size_t>(q)];
    }
    return R;
}

BlockStructure detect_structure(const Mat& Qt, double tol) {
    if (Qt.rows() != 6 || Qt.cols() != 6)
        throw StructureNotFound("2+4 block structure needs a 6x6 matrix, got " + std::to_string(Qt.rows()) + "x" +
                                std::to_string(Qt.cols()));
    if (!(tol >= 0)) throw PreconditionError("detect_structure: tolerance must be >= 0");
    if ((Qt + Qt.transpose()).cwiseAbs().maxCoeff() > std::max(tol, 1e-10))
        throw PreconditionError("detect_structure: matrix is not skew-symmetric");

    std::array<std::vector<int>, 6> adj;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            if (i != j && std::abs(Qt(i, j)) > tol) adj[static_cast<std::size_t>(i)].push_back(j);

    std::array<int, 6> comp;
    comp.fill(-1);
    std::vector<std::vector<int>> comps;
    for (int s = 0; s < 6; ++s) {
        if (comp[static_cast<std::size_t>(s)] >= 0) continue;
        std::vector<int> members{s};
        comp[static_cast<std::size_t>(s)] = static_cast<int>(comps.size());
        for (std::size_t h = 0; h < members.size(); ++h)
            for (int nb : adj[static_cast<std::size_t>(members[h])])
                if (comp[static_cast<std::size_t>(nb)] < 0) {
                    comp[static_cast<std::size_t>(nb)] = static_cast<int>(comps.size());
                    members.push_back(nb);
                }
        std::sort(members.begin(), members.end());
        comps.push_back(members);
    }
    const std::vector<int>* two = nullptr;
    const std::vector<int>* four = nullptr;
    for (const auto& c : comps) {
        if (c.size() == 2 && !two) two = &c;
        else if (c.size() == 4 && !four) four = &c;
        else throw StructureNotFound("coupling graph does not split into blocks of size 2 and 4");
    }
    if (!two || !four) throw StructureNotFound("coupling graph does not split into blocks of size 2 and 4");

    BlockStructure bs;
    bs.tolerance = tol;
    int p = (*two)[0], q = (*two)[1];
    if (Qt(p, q) > 0) std::swap(p, q);
    bs.a = -Qt(p, q);
    bs.permutation[0] = p;
    bs.permutation[1] = q;

    int hub = -1;
    std::vector<int> leaves;
    for (int v : *four) {
        const auto deg = adj[static_cast<std::size_t>(v)].size();
        if (deg == 3) {
            if (hub >= 0) throw StructureNotFound("arrowhead block has more than one hub");
            hub = v;
        } else if (deg == 1) {
            leaves.push_back(v);
        } else {
            throw StructureNotFound("4x4 block is not an arrowhead");
        }
    }
    if (hub < 0 || leaves.size() != 3) throw StructureNotFound("4x4 block is not an arrowhead");
    bs.permutation[2] = hub;
    for (std::size_t i = 0; i < 3; ++i) {
        int leaf = leaves[i];
        bs.permutation[3 + i] = leaf;
        double zi = -Qt(hub, leaf);
        if (zi < 0) {
            bs.signs[static_cast<std::size_t>(leaf)] = -1.0;
            zi = -zi;
        }
        bs.z[i] = zi;
    }

    Eigen::Matrix<double, 6, 6> R = bs.transform();
    Eigen::Matrix<double, 6, 6> blockform = Eigen::Matrix<double, 6, 6>::Zero();
    blockform.topLeftCorner<2, 2>() = bs.two_block();
    blockform.bottomRightCorner<4, 4>() = bs.arrow_block();
    Eigen::Matrix<double, 6, 6> Qb = R * Qt * R.transpose();
    if ((Qb - blockform).cwiseAbs().maxCoeff() > tol)
        throw StructureNotFound("reassembled block form differs from Qt beyond tolerance");
    return bs;
}

ArrowAngles arrow_angles(const std::array<double, 3>& z, double t) {
    ArrowAngles g;
    g.r = std::sqrt(z[0] * z[0] + z[1] * z[1] + z[2] * z[2]);
    g.s = std::sqrt(z[1] * z[1] + z[2] * z[2]);
    g.theta = 2.0 * std::atan2(g.s, z[0]);
    g.phi = 2.0 * std::atan2(z[1], z[2]);
    g.beta = 2.0 * g.r * t;
    return g;
}

GateList arrow_circuit(const std::array<double, 3>& z, double t) {
    const ArrowAngles g = arrow_angles(z, t);
    GateList c;
    c.num_qubits = 2;
    // V = CRy^{q2->q1}(-theta) CRy^{q1->q2}(phi)
    c.gates.push_back({GateKind::CRy, 1, 0, g.phi});
    c.gates.push_back({GateKind::CRy, 0, 1, -g.theta});
    // U = (X (x) I) CRy^{q1->q2}(beta) (X (x) I)
    c.gates.push_back({GateKind::X, 0, std::nullopt, 0.0});
    c.gates.push_back({GateKind::CRy, 1, 0, g.beta});
    c.gates.push_back({GateKind::X, 0, std::nullopt, 0.0});
    // V^T = CRy^{q1->q2}(-phi) CRy^{q2->q1}(theta)
    c.gates.push_back({GateKind::CRy, 0, 1, g.theta});
    c.gates.push_back({GateKind::CRy, 1, 0, -g.phi});
    return c;
}

std::pair<GateList, GateList> decompose(const BlockStructure& blocks, double t) {
    GateList one;
    one.num_qubits = 1;
    one.gates.push_back({GateKind::Ry, 0, std::nullopt, 2.0 * blocks.a * t});
    return {one, arrow_circuit(blocks.z, t)};
}

Mat simulate(const GateList& gates) {
    const int q = gates.num_qubits;
    if (q < 1 || q > 16) throw PreconditionError("simulate: unsupported qubit count");
    const Eigen::Index dim = Eigen::Index{1} << q;
    Mat M = Mat::Identity(dim, dim);
    for (const Gate& g : gates.gates) {
        if (g.target < 0 || g.target >= q) throw PreconditionError("simulate: target qubit index out of range");
        if (g.control && (*g.control < 0 || *g.control >= q || *g.control == g.target))
            throw PreconditionError("simulate: control qubit index out of range");
        Eigen::Matrix2d u;
        if (g.kind == GateKind::X) {
            u << 0, 1, 1, 0;
        } else {
            double c = std::cos(0.5 * g.angle), s = std::sin(0.5 * g.angle);
            u << c, -s, s, c;
        }
        if (g.kind == GateKind::CRy && !g.control) throw PreconditionError("simulate: cry gate without control");
        const int tshift = q - 1 - g.target;
        Mat full = Mat::Zero(dim, dim);
        for (Eigen::Index j = 0; j < dim; ++j) {
            if (g.control && ((j >> (q - 1 - *g.control)) & 1) == 0) {
                full(j, j) = 1.0;
                continue;
            }
            const int bit = static_cast<int>((j >> tshift) & 1);
            const Eigen::Index j0 = j & ~(Eigen::Index{1} << tshift);
            const Eigen::Index j1 = j | (Eigen::Index{1} << tshift);
            full(j0, j) = u(0, bit);
            full(j1, j) = u(1, bit);
        }
        M = full * M;
    }
    return M;
}

Eigen::Matrix4d arrow_exponential(const std::array<double, 3>& z, double t) {
    BlockStructure bs;
    bs.z = z;
    Eigen::Matrix4d A = bs.arrow_block();
    const double r = std::sqrt(z[0] * z[0] + z[1] * z[1] + z[2] * z[2]);
    if (r == 0) return Eigen::Matrix4d::Identity();
    return Eigen::Matrix4d::Identity() + (std::sin(r * t) / r) * A + ((1.0 - std::cos(r * t)) / (r * r)) * A * A;
}

Mat assemble_propagator(const BlockStructure& blocks, const Mat& two, const Mat& four) {
    if (two.rows() != 2 || two.cols() != 2 || four.rows() != 4 || four.cols() != 4)
        throw PreconditionError("assemble_propagator: expects 2x2 and 4x4 blocks");
    Mat Bm = Mat::Zero(6, 6);
    Bm.topLeftCorner(2, 2) = two;
    Bm.bottomRightCorner(4, 4) = four;
    Mat R = blocks.transform();
    return R.transpose() * Bm * R;
}

std::string circuit_to_string(const GateList& gates, const CircuitHeader& header, CircuitFormat format) {
    std::ostringstream out;
    out << "# kvn circuit\n";
    out << "# t=" << format_double(header.t) << " a=" << format_double(header.a) << " z="
        << format_double(header.z[0]) << ',' << format_double(header.z[1]) << ',' << format_double(header.z[2])
        << '\n';
    out << "# qubits=" << gates.num_qubits << '\n';
    if (format == CircuitFormat::QasmLite) out << "qreg q[" << gates.num_qubits << "];\n";
    for (const Gate& g : gates.gates) {
        switch (g.kind) {
            case GateKind::Ry:
                out << "ry q[" << g.target << "] " << format_double(g.angle) << '\n';
                break;
            case GateKind::CRy:
                out << "cry q[" << *g.control << "] q[" << g.target << "] " << format_double(g.angle) << '\n';
                break;
            case GateKind::X:
                out << "x q[" << g.target << "]\n";
                break;
        }
    }
    return out.str();
}

void export_circuit(const GateList& gates, const std::string& path, const CircuitHeader& header,
                    CircuitFormat format) {
    auto out = open_output(path);
    out << circuit_to_string(gates, header, format);
    if (!out) throw PreconditionError("failed writing '" + path + "'");
}

namespace {

int parse_qubit(const std::string& tok, std::uint64_t offset) {
    if (tok.size() < 4 || tok.compare(0, 2, "q[") != 0 || tok.back() != ']')
        throw ParseError("expected q[i], got '" + tok + "'", offset);
    int v = 0;
    auto res = std::from_chars(tok.data() + 2, tok.data() + tok.size() - 1, v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() - 1 || v < 0)
        throw ParseError("bad qubit index '" + tok + "'", offset);
    return v;
}

double parse_angle(const std::string& tok, std::uint64_t offset) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
        throw ParseError("bad angle '" + tok + "'", offset);
    return v;
}

}  // namespace

GateList parse_circuit(const std::string& text) {
    GateList gl;
    int declared = 0;
    int max_index = -1;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        const std::uint64_t offset = pos;
        pos = eol + 1;
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto k = line.find("qubits=");
            if (k != std::string::npos) declared = std::atoi(line.c_str() + k + 7);
            continue;
        }
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string s; ls >> s;) tok.push_back(s);
        if (tok.empty()) continue;
        Gate g;
        if (tok[0] == "qreg" && tok.size() == 2) {
            std::string t = tok[1];
            if (t.empty() || t.back() != ';') throw ParseError("qreg line must end with ';'", offset);
            declared = parse_qubit(t.substr(0, t.size() - 1), offset);
            continue;
        } else if (tok[0] == "ry" && tok.size() == 3) {
            g.kind = GateKind::Ry;
            g.target = parse_qubit(tok[1], offset);
            g.angle = parse_angle(tok[2], offset);
        } else if (tok[0] == "cry" && tok.size() == 4) {
            g.kind = GateKind::CRy;
            g.control = parse_qubit(tok[1], offset);
            g.target = parse_qubit(tok[2], offset);
            g.angle = parse_angle(tok[3], offset);
            max_index = std::max(max_index, *g.control);
        } else if (tok[0] == "x" && tok.size() == 2) {
            g.kind = GateKind::X;
            g.target = parse_qubit(tok[1], offset);
        } else {
            throw ParseError("unrecognized gate line '" + line + "'", offset);
        }
        max_index = std::max(max_index, g.target);
        gl.gates.push_back(g);
    }
    gl.num_qubits = declared > 0 ? declared : std::max(1, max_index + 1);
    if (max_index >= gl.num_qubits) throw ParseError("gate uses a qubit beyond the declared register", 0);
    return gl;
}

GateList load_circuit(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_circuit(text);
}

}  // namespace kvn
