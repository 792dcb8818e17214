#include "kvn/estimator.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <thread>

#include "kvn/errors.hpp"

namespace kvn {

namespace {

std::atomic<int> g_threads{1};

int resolve_threads(int requested) {
    int t = requested > 0 ? requested : g_threads.load();
    return std::max(1, t);
}

// Basis values and generator columns at one state.
void evaluate_point(const Dictionary& dict, const VectorField& field, VecIn x, VecOut phi, VecOut kphi,
                    VecOut qphi, Mat& grads, Vec& bx, std::size_t index) {
    dict.eval_grad(x, phi, grads);
    field.b(x, bx);
    kphi.noalias() = grads * bx;
    double div = field.div_b(x);
    qphi = -kphi - 0.5 * div * phi;
    if (!phi.allFinite() || !kphi.allFinite() || !std::isfinite(div))
        throw NonFiniteError("non-finite basis value", index);
}

GramMatrices empty_gram(int n, bool has_kvn) {
    GramMatrices g;
    g.G = Mat::Zero(n, n);
    g.A = Mat::Zero(n, n);
    if (has_kvn) {
        g.B = Mat::Zero(n, n);
        g.C = Mat::Zero(n, n);
    }
    g.has_kvn = has_kvn;
    return g;
}

// Adds the weighted moments of one chunk of columns. G and C are accumulated
// in their lower triangle only.
void add_chunk(const Mat& phi, const Mat& dphi, const Mat* qphi, const Vec& w, GramMatrices& out) {
    Vec sw = w.array().sqrt();
    Mat ps = phi * sw.asDiagonal();
    out.G.selfadjointView<Eigen::Lower>().rankUpdate(ps);
    Mat pw = phi * w.asDiagonal();
    out.A.noalias() += pw * dphi.transpose();
    if (qphi) {
        out.B.noalias() += pw * qphi->transpose();
        Mat qs = (*qphi) * sw.asDiagonal();
        out.C.selfadjointView<Eigen::Lower>().rankUpdate(qs);
    }
}

void add_into(GramMatrices& total, const GramMatrices& part) {
    total.G.triangularView<Eigen::Lower>() += part.G;
    total.A += part.A;
    if (total.has_kvn) {
        total.B += part.B;
        total.C.triangularView<Eigen::Lower>() += part.C;
    }
}

void finish_symmetric(GramMatrices& g) {
    g.G.triangularView<Eigen::StrictlyUpper>() = g.G.transpose();
    if (g.has_kvn) g.C.triangularView<Eigen::StrictlyUpper>() = g.C.transpose();
}

void check_weights(const Vec& w, Eigen::Index m) {
    if (w.size() != m) throw PreconditionError("weights must have one entry per sample");
    if (!(w.array() > 0).all()) throw PreconditionError("weights must be positive");
}

}  // namespace

void set_thread_count(int threads) { g_threads = std::max(1, threads); }
int thread_count() { return g_threads.load(); }

DataMatrices assemble_from_samples(const Dictionary& dict, const VectorField& field, const Points& points) {
    const Eigen::Index m = points.cols();
    if (m < 1) throw PreconditionError("assemble_from_samples: m >= 1 required");
    if (points.rows() != dict.dim()) throw PreconditionError("assemble_from_samples: point dimension mismatch");
    const int n = dict.size();
    DataMatrices data;
    data.m = static_cast<std::size_t>(m);
    data.phi.resize(n, m);
    data.dphi.resize(n, m);
    data.qphi.resize(n, m);
    data.weights = Vec::Constant(m, 1.0 / static_cast<double>(m));
    Mat grads(n, dict.dim());
    Vec bx(dict.dim());
    for (Eigen::Index l = 0; l < m; ++l)
        evaluate_point(dict, field, points.col(l), data.phi.col(l), data.dphi.col(l), data.qphi.col(l), grads, bx,
                       static_cast<std::size_t>(l));
    return data;
}

DataMatrices assemble_from_trajectories(const Dictionary& dict, const Points& x, const Points& x_next, double h) {
    if (!(h > 0)) throw PreconditionError("assemble_from_trajectories: h > 0 required");
    if (x.cols() != x_next.cols() || x.rows() != x_next.rows())
        throw PreconditionError("assemble_from_trajectories: snapshot shapes differ");
    const Eigen::Index m = x.cols();
    if (m < 1) throw PreconditionError("assemble_from_trajectories: m >= 1 required");
    const int n = dict.size();
    DataMatrices data;
    data.m = static_cast<std::size_t>(m);
    data.has_kvn = false;
    data.phi.resize(n, m);
    data.dphi.resize(n, m);
    data.weights = Vec::Constant(m, 1.0 / static_cast<double>(m));
    Mat grads(n, dict.dim());
    for (Eigen::Index l = 0; l < m; ++l) {
        dict.eval_grad(x.col(l), data.phi.col(l), grads);
        Vec velocity = (x_next.col(l) - x.col(l)) / h;
        data.dphi.col(l).noalias() = grads * velocity;
        if (!data.phi.col(l).allFinite() || !data.dphi.col(l).allFinite())
            throw NonFiniteError("non-finite basis value", static_cast<std::size_t>(l));
    }
    return data;
}

QuadratureRule midpoint_rule(const Domain& domain, int grid_per_dim) {
    if (grid_per_dim < 2) throw PreconditionError("quadrature: grid_per_dim >= 2 required");
    const int d = domain.box.dim();
    Vec width = (domain.box.upper - domain.box.lower) / grid_per_dim;
    const double cell = width.prod();
    std::vector<int> idx(d, 0);
    std::vector<double> coords;
    Vec x(d);
    while (true) {
        for (int i = 0; i < d; ++i) x[i] = domain.box.lower[i] + (idx[i] + 0.5) * width[i];
        if (domain.indicator(x)) coords.insert(coords.end(), x.data(), x.data() + d);
        int i = d - 1;
        while (i >= 0 && ++idx[i] == grid_per_dim) idx[i--] = 0;
        if (i < 0) break;
    }
    const Eigen::Index count = static_cast<Eigen::Index>(coords.size()) / d;
    if (count == 0) throw PreconditionError("quadrature: no interior nodes, degenerate domain");
    QuadratureRule rule;
    rule.points = Eigen::Map<Mat>(coords.data(), d, count);
    rule.weights = Vec::Constant(count, cell);
    return rule;
}

DataMatrices assemble_by_quadrature(const Dictionary& dict, const VectorField& field, const Domain& domain,
                                    int grid_per_dim) {
    QuadratureRule rule = midpoint_rule(domain, grid_per_dim);
    DataMatrices data = assemble_from_samples(dict, field, rule.points);
    data.weights = rule.weights;
    return data;
}

GramMatrices accumulate_gram(const Dictionary& dict, const VectorField& field, const Points& points,
                             const Vec& weights, const AssemblyOptions& opts) {
    const Eigen::Index m = points.cols();
    if (m < 1) throw PreconditionError("accumulate_gram: m >= 1 required");
    if (points.rows() != dict.dim()) throw PreconditionError("accumulate_gram: point dimension mismatch");
    check_weights(weights, m);
    const int n = dict.size();
    const auto chunk = static_cast<Eigen::Index>(std::max<std::size_t>(1, opts.chunk));
    const Eigen::Index nchunks = (m + chunk - 1) / chunk;
    const int workers = static_cast<int>(std::min<Eigen::Index>(resolve_threads(opts.threads), nchunks));

    auto compute = [&](Eigen::Index c, GramMatrices& part) {
        const Eigen::Index begin = c * chunk;
        const Eigen::Index len = std::min(chunk, m - begin);
        Mat phi(n, len), kphi(n, len), qphi(n, len);
        Mat grads(n, dict.dim());
        Vec bx(dict.dim());
        for (Eigen::Index l = 0; l < len; ++l)
            evaluate_point(dict, field, points.col(begin + l), phi.col(l), kphi.col(l), qphi.col(l), grads, bx,
                           static_cast<std::size_t>(begin + l));
        part = empty_gram(n, true);
        add_chunk(phi, kphi, &qphi, weights.segment(begin, len), part);
    };

    GramMatrices total = empty_gram(n, true);
    total.m = static_cast<std::size_t>(m);
    std::vector<GramMatrices> parts(static_cast<std::size_t>(workers));
    for (Eigen::Index first = 0; first < nchunks; first += workers) {
        const int wave = static_cast<int>(std::min<Eigen::Index>(workers, nchunks - first));
        if (wave == 1) {
            compute(first, parts[0]);
        } else {
            std::vector<std::thread> pool;
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(wave));
            for (int t = 0; t < wave; ++t)
                pool.emplace_back([&, t] {
                    try {
                        compute(first + t, parts[static_cast<std::size_t>(t)]);
                    } catch (...) {
                        errors[static_cast<std::size_t>(t)] = std::current_exception();
                    }
                });
            for (auto& th : pool) th.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }
        for (int t = 0; t < wave; ++t) add_into(total, parts[static_cast<std::size_t>(t)]);
    }
    finish_symmetric(total);
    return total;
}

GramMatrices gram_from_data(const DataMatrices& data) {
    const Eigen::Index m = data.phi.cols();
    if (m < 1) throw PreconditionError("estimate_generators: data is empty");
    check_weights(data.weights, m);
    const int n = static_cast<int>(data.phi.rows());
    const Eigen::Index chunk = 2048;
    GramMatrices total = empty_gram(n, data.has_kvn);
    total.m = data.m;
    for (Eigen::Index begin = 0; begin < m; begin += chunk) {
        const Eigen::Index len = std::min(chunk, m - begin);
        GramMatrices part = empty_gram(n, data.has_kvn);
        Mat q;
        if (data.has_kvn) q = data.qphi.middleCols(begin, len);
        add_chunk(data.phi.middleCols(begin, len), data.dphi.middleCols(begin, len), data.has_kvn ? &q : nullptr,
                  data.weights.segment(begin, len), part);
        add_into(total, part);
    }
    finish_symmetric(total);
    return total;
}

GramSpectrum gram_spectrum(const Mat& G, double truncation) {
    Eigen::SelfAdjointEigenSolver<Mat> es(G);
    if (es.info() != Eigen::Success) throw NumericalError("Gram eigendecomposition failed");
    const Vec& ev = es.eigenvalues();
    const double lmax = ev.size() ? ev.maxCoeff() : 0.0;
    if (!(lmax > 0)) throw NumericalError("rank zero: all Gram eigenvalues truncated");
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] > truncation * lmax && ev[i] > 0) keep.push_back(i);
    if (keep.empty()) throw NumericalError("rank zero: all Gram eigenvalues truncated");
    GramSpectrum s;
    s.values.resize(static_cast<Eigen::Index>(keep.size()));
    s.vectors.resize(G.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        auto jj = static_cast<Eigen::Index>(j);
        s.values[jj] = ev[keep[j]];
        Vec v = es.eigenvectors().col(keep[j]);
        // Fix the sign so the largest-magnitude entry is positive.
        Eigen::Index imax;
        v.cwiseAbs().maxCoeff(&imax);
        if (v[imax] < 0) v = -v;
        s.vectors.col(jj) = v;
    }
    return s;
}

GeneratorMatrices estimate_generators(const GramMatrices& gram, double truncation) {
    if (!(truncation >= 0)) throw PreconditionError("truncation must be >= 0");
    GeneratorMatrices gen;
    gen.G = gram.G;
    gen.A = gram.A;
    if (gram.has_kvn) {
        gen.B = gram.B;
        gen.C = gram.C;
    }
    gen.m = gram.m;
    gen.truncation = truncation;
    GramSpectrum s = gram_spectrum(gen.G, truncation);
    gen.rank = static_cast<int>(s.values.size());
    Mat pinv = s.vectors * s.values.cwiseInverse().asDiagonal() * s.vectors.transpose();
    gen.L = pinv * gen.A;
    gen.Lstar = pinv * gen.A.transpose();
    gen.Q = 0.5 * pinv * (gen.A.transpose() - gen.A);
    return gen;
}

GeneratorMatrices estimate_generators(const DataMatrices& data, double truncation) {
    return estimate_generators(gram_from_data(data), truncation);
}

WhitenedRepresentation whiten(const GeneratorMatrices& gen) {
    if (gen.rank < 1) throw PreconditionError("whiten: rank >= 1 required");
    GramSpectrum s = gram_spectrum(gen.G, gen.truncation);
    WhitenedRepresentation w;
    w.eig_threshold = gen.truncation;
    w.T = s.vectors * s.values.cwiseSqrt().cwiseInverse().asDiagonal();
    Mat At = w.T.transpose() * gen.A * w.T;
    Mat Qt = 0.5 * (At.transpose() - At);
    w.Qt = 0.5 * (Qt - Qt.transpose());
    return w;
}

double skew_defect(const Mat& M) { return M.size() ? (M + M.transpose()).cwiseAbs().maxCoeff() : 0.0; }

double gram_condition(const GeneratorMatrices& gen) {
    GramSpectrum s = gram_spectrum(gen.G, gen.truncation);
    return s.values.maxCoeff() / s.values.minCoeff();
}

ReferenceGalerkin reference_oscillator_galerkin() {
    const double scale = std::sqrt(2.0) * std::numbers::pi;
    ReferenceGalerkin ref;
    ref.G = Mat::Zero(6, 6);
    ref.G(0, 0) = 1.0 / 3;
    ref.G(0, 3) = ref.G(3, 0) = 1.0 / 24;
    ref.G(0, 5) = ref.G(5, 0) = 1.0 / 12;
    ref.G(1, 1) = 1.0 / 24;
    ref.G(2, 2) = 1.0 / 12;
    ref.G(3, 3) = 1.0 / 80;
    ref.G(3, 5) = ref.G(5, 3) = 1.0 / 120;
    ref.G(4, 4) = 1.0 / 120;
    ref.G(5, 5) = 1.0 / 20;
    ref.G *= scale;
    ref.A = Mat::Zero(6, 6);
    ref.A(1, 2) = -1.0 / 12;
    ref.A(2, 1) = 1.0 / 12;
    ref.A(3, 4) = -1.0 / 60;
    ref.A(4, 3) = 1.0 / 60;
    ref.A(4, 5) = -1.0 / 30;
    ref.A(5, 4) = 1.0 / 30;
    ref.A *= scale;
    ref.Q = Mat::Zero(6, 6);
    ref.Q(1, 2) = 2;
    ref.Q(2, 1) = -1;
    ref.Q(3, 4) = 2;
    ref.Q(4, 3) = -2;
    ref.Q(4, 5) = 4;
    ref.Q(5, 4) = -1;
    return ref;
}

// ---------------------------------------------------------------------------
// Archive: "KVNGEN1\n", one line of JSON, then little-endian binary64 blocks.

namespace {

static_assert(std::endian::native == std::endian::little, "archive blocks are written in host order");

constexpr char kMagic[] = "KVNGEN1";
constexpr std::size_t kMagicLen = 7;

struct Block {
    const char* name;
    const Mat* mat;
};

void write_block(std::ostream& out, const Mat& M) {
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) {
            double v = M(i, j);
            out.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
}

}  // namespace

void save_matrices(const GeneratorMatrices& gen, const WhitenedRepresentation& white, const std::string& path,
                   const json& meta) {
    json header = meta.is_object() ? meta : json::object();
    header["format"] = kMagic;
    header["version"] = kArchiveVersion;
    header["n"] = gen.n();
    header["k"] = white.k();
    header["m"] = gen.m;
    header["rank"] = gen.rank;
    header["truncation"] = gen.truncation;
    header["eig_threshold"] = white.eig_threshold;
    const Block blocks[] = {{"G", &gen.G}, {"A", &gen.A},          {"C", &gen.C}, {"L", &gen.L},
                            {"Lstar", &gen.Lstar}, {"Q", &gen.Q}, {"T", &white.T}, {"Qt", &white.Qt},
                            {"B", &gen.B}};
    json list = json::array();
    for (const auto& b : blocks) list.push_back({{"name", b.name}, {"rows", b.mat->rows()}, {"cols", b.mat->cols()}});
    header["blocks"] = list;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot open '" + path + "' for writing");
    out.write(kMagic, kMagicLen);
    out.put('\n');
    out << header.dump() << '\n';
    for (const auto& b : blocks) write_block(out, *b.mat);
    if (!out) throw PreconditionError("failed writing '" + path + "'");
}

Archive load_matrices(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kMagicLen + 1 || bytes.compare(0, kMagicLen, kMagic) != 0 || bytes[kMagicLen] != '\n')
        throw ParseError("missing KVNGEN1 magic", 0);
    std::size_t pos = kMagicLen + 1;
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw ParseError("unterminated header", pos);
    json header;
    try {
        header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                             bytes.begin() + static_cast<std::ptrdiff_t>(eol));
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), pos + e.byte);
    }
    if (!header.is_object() || !header.contains("version") || !header["version"].is_number_integer())
        throw ParseError("header lacks a version field", pos);
    if (header["version"].get<int>() != kArchiveVersion)
        throw ParseError("unsupported archive version " + header["version"].dump(), pos);
    pos = eol + 1;

    Archive ar;
    ar.header = header;
    std::map<std::string, Mat*> targets = {{"G", &ar.gen.G},     {"A", &ar.gen.A},         {"C", &ar.gen.C},
                                           {"L", &ar.gen.L},     {"Lstar", &ar.gen.Lstar}, {"Q", &ar.gen.Q},
                                           {"T", &ar.white.T},   {"Qt", &ar.white.Qt},     {"B", &ar.gen.B}};
    if (!header.contains("blocks") || !header["blocks"].is_array())
        throw ParseError("header lacks a block list", kMagicLen + 1);
    try {
        for (const auto& b : header["blocks"]) {
            const std::string name = b.at("name").get<std::string>();
            const auto rows = b.at("rows").get<Eigen::Index>();
            const auto cols = b.at("cols").get<Eigen::Index>();
            if (rows < 0 || cols < 0) throw ParseError("negative block shape for " + name, pos);
            auto it = targets.find(name);
            if (it == targets.end()) throw ParseError("unknown block " + name, pos);
            const std::size_t need = static_cast<std::size_t>(rows * cols) * sizeof(double);
            if (bytes.size() - pos < need) throw ParseError("truncated block " + name, bytes.size());
            Mat& M = *it->second;
            M.resize(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i)
                for (Eigen::Index j = 0; j < cols; ++j) {
                    double v;
                    std::memcpy(&v, bytes.data() + pos, sizeof(double));
                    M(i, j) = v;
                    pos += sizeof(double);
                }
        }
        if (pos != bytes.size()) throw ParseError("trailing bytes after last block", pos);
        ar.gen.rank = header.at("rank").get<int>();
        ar.gen.truncation = header.at("truncation").get<double>();
        ar.gen.m = header.at("m").get<std::size_t>();
        ar.white.eig_threshold = header.at("eig_threshold").get<double>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), kMagicLen + 1);
    }
    if (ar.gen.G.rows() != ar.gen.G.cols() || ar.white.Qt.rows() != ar.white.Qt.cols() ||
        ar.white.T.cols() != ar.white.Qt.rows() || ar.white.T.rows() != ar.gen.G.rows())
        throw ParseError("inconsistent block shapes", kMagicLen + 1);
    return ar;
}

}  // namespace kvn
