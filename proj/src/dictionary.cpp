#include "kvn/dictionary.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "kvn/errors.hpp"

namespace kvn {

Vec Dictionary::operator()(VecIn x) const {
    Vec out(size());
    eval(x, out);
    return out;
}

Mat Dictionary::gradient(VecIn x) const {
    Vec v(size());
    Mat g(size(), dim());
    eval_grad(x, v, g);
    return g;
}

std::vector<std::vector<int>> graded_lex_exponents(int dim, int max_degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> alpha(dim, 0);
    // Within one degree, exponents are listed lexicographically decreasing,
    // so for d = 2: x1^2, x1 x2, x2^2.
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == dim - 1) {
            alpha[pos] = remaining;
            out.push_back(alpha);
            return;
        }
        for (int a = remaining; a >= 0; --a) {
            alpha[pos] = a;
            rec(pos + 1, remaining - a);
        }
    };
    for (int deg = 0; deg <= max_degree; ++deg) rec(0, deg);
    return out;
}

MonomialTapered::MonomialTapered(int dim, int max_degree, ScalarField taper, json taper_desc)
    : dim_(dim), max_degree_(max_degree), taper_(std::move(taper)), taper_desc_(std::move(taper_desc)) {
    if (dim < 1) throw PreconditionError("monomial dictionary: dim >= 1 required");
    if (max_degree < 0) throw PreconditionError("monomial dictionary: max_degree >= 0 required");
    exponents_ = graded_lex_exponents(dim, max_degree);
}

void MonomialTapered::eval(VecIn x, VecOut values) const {
    Mat pw(dim_, max_degree_ + 1);
    for (int j = 0; j < dim_; ++j) {
        pw(j, 0) = 1.0;
        for (int p = 1; p <= max_degree_; ++p) pw(j, p) = pw(j, p - 1) * x[j];
    }
    double tau = taper_.value(x);
    for (std::size_t k = 0; k < exponents_.size(); ++k) {
        double mono = 1.0;
        for (int j = 0; j < dim_; ++j) mono *= pw(j, exponents_[k][j]);
        values[static_cast<Eigen::Index>(k)] = tau * mono;
    }
}

void MonomialTapered::eval_grad(VecIn x, VecOut values, MatOut grads) const {
    Mat pw(dim_, max_degree_ + 1);
    for (int j = 0; j < dim_; ++j) {
        pw(j, 0) = 1.0;
        for (int p = 1; p <= max_degree_; ++p) pw(j, p) = pw(j, p - 1) * x[j];
    }
    double tau = taper_.value(x);
    Vec dtau(dim_);
    taper_.grad(x, dtau);
    for (std::size_t k = 0; k < exponents_.size(); ++k) {
        const auto& a = exponents_[k];
        double mono = 1.0;
        for (int j = 0; j < dim_; ++j) mono *= pw(j, a[j]);
        auto row = static_cast<Eigen::Index>(k);
        values[row] = tau * mono;
        for (int j = 0; j < dim_; ++j) {
            double dmono = 0.0;
            if (a[j] > 0) {
                dmono = a[j] * pw(j, a[j] - 1);
                for (int i = 0; i < dim_; ++i)
                    if (i != j) dmono *= pw(i, a[i]);
            }
            grads(row, j) = dtau[j] * mono + tau * dmono;
        }
    }
}

json MonomialTapered::description() const {
    return {{"basis", "monomial"}, {"max_degree", max_degree_}, {"taper", taper_desc_}};
}

RffTapered::RffTapered(Mat frequencies, Vec phases, ScalarField taper, json desc)
    : freq_(std::move(frequencies)), phases_(std::move(phases)), taper_(std::move(taper)), desc_(std::move(desc)) {
    if (freq_.rows() != phases_.size()) throw PreconditionError("rff dictionary: frequency/phase count mismatch");
    if (phases_.size() < 1) throw PreconditionError("rff dictionary: n >= 1 required");
}

void RffTapered::eval(VecIn x, VecOut values) const {
    double tau = taper_.value(x);
    values = tau * (freq_ * x + phases_).array().cos().matrix();
}

void RffTapered::eval_grad(VecIn x, VecOut values, MatOut grads) const {
    double tau = taper_.value(x);
    Vec dtau(dim());
    taper_.grad(x, dtau);
    Eigen::ArrayXd arg = (freq_ * x + phases_).array();
    Eigen::ArrayXd c = arg.cos();
    Eigen::ArrayXd s = arg.sin();
    values = tau * c.matrix();
    grads.noalias() = c.matrix() * dtau.transpose();
    grads.noalias() -= (tau * s).matrix().asDiagonal() * freq_;
}

std::shared_ptr<MonomialTapered> build_monomial_tapered(const MonomialTaperedSpec& spec, int dim) {
    return std::make_shared<MonomialTapered>(dim, spec.max_degree, spec.law, "conservation_law");
}

ScalarField exponential_taper(const ConservationLaw& law, double k) {
    if (!(k > 0)) throw ConfigError("exponential taper: k must be > 0");
    auto value = [law, k](VecIn x) {
        double f = law.value(x);
        if (f <= 1e-12) return 0.0;
        return std::exp(-1.0 / (k * f * f));
    };
    auto grad = [law, k](VecIn x, VecOut out) {
        double f = law.value(x);
        if (f <= 1e-12) {
            out.setZero();
            return;
        }
        double eta = std::exp(-1.0 / (k * f * f));
        law.grad(x, out);
        out *= eta * 2.0 / (k * f * f * f);
    };
    return {value, grad};
}

std::shared_ptr<RffTapered> build_rff_tapered(const RffTaperedSpec& spec,
                                              const std::optional<ConservationLaw>& law, int dim) {
    if (spec.n < 1) throw PreconditionError("rff dictionary: n >= 1 required");
    if (!(spec.bandwidth > 0)) throw PreconditionError("rff dictionary: bandwidth must be > 0");
    if (!law) {
        throw ConfigError(spec.taper == TaperKind::Exponential
                              ? "exponential taper requested without a conservation law"
                              : "conservation-law taper requested without a law");
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0 / spec.bandwidth);
    std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
    Mat freq(spec.n, dim);
    for (int i = 0; i < spec.n; ++i)
        for (int j = 0; j < dim; ++j) freq(i, j) = normal(rng);
    Vec phases(spec.n);
    for (int i = 0; i < spec.n; ++i) phases[i] = unif(rng);

    json desc = {{"basis", "rff"}, {"n", spec.n}, {"bandwidth", spec.bandwidth}, {"seed", spec.seed}};
    ScalarField taper;
    if (spec.taper == TaperKind::Exponential) {
        taper = exponential_taper(*law, spec.taper_k);
        desc["taper"] = "exponential";
        desc["taper_k"] = spec.taper_k;
    } else {
        taper = *law;
        desc["taper"] = "conservation_law";
    }
    return std::make_shared<RffTapered>(std::move(freq), std::move(phases), std::move(taper), std::move(desc));
}

namespace {

ScalarField unit_taper() {
    return {[](VecIn) { return 1.0; }, [](VecIn, VecOut out) { out.setZero(); }};
}

}  // namespace

DictionaryPtr build_dictionary(const json& spec, const BenchmarkSystem& sys) {
    if (!spec.is_object() || !spec.contains("basis")) throw ConfigError("basis block must name a 'basis'");
    const std::string kind = spec.at("basis").get<std::string>();
    const std::string taper = spec.value("taper", std::string("conservation_law"));
    try {
        if (kind == "monomial") {
            int r = spec.value("max_degree", 2);
            if (taper == "none") return std::make_shared<MonomialTapered>(sys.dim(), r, unit_taper(), "none");
            if (taper != "conservation_law") throw ConfigError("monomial basis supports taper conservation_law or none");
            return std::make_shared<MonomialTapered>(sys.dim(), r, sys.boundary_taper(), "conservation_law");
        }
        if (kind == "rff") {
            RffTaperedSpec rs;
            rs.n = spec.value("n", 300);
            rs.bandwidth = spec.value("bandwidth", 0.5);
            rs.seed = spec.value("seed", std::uint64_t{0});
            rs.taper_k = spec.value("taper_k", 5000.0);
            if (taper == "exponential") {
                rs.taper = TaperKind::Exponential;
                return build_rff_tapered(rs, sys.law, sys.dim());
            }
            if (taper != "conservation_law") throw ConfigError("rff basis supports taper conservation_law or exponential");
            return build_rff_tapered(rs, sys.boundary_taper(), sys.dim());
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("basis block: ") + e.what());
    }
    throw ConfigError("unknown basis '" + kind + "'");
}

Vec apply_generator(const Dictionary& dict, const VectorField& field, Generator which, VecIn x) {
    const int n = dict.size();
    Vec values(n);
    Mat grads(n, dict.dim());
    dict.eval_grad(x, values, grads);
    Vec bx = field(x);
    Vec directional = grads * bx;
    switch (which) {
        case Generator::Koopman:
            return directional;
        case Generator::PerronFrobenius:
            return -directional - field.div_b(x) * values;
        case Generator::KvN:
        default:
            return -directional - 0.5 * field.div_b(x) * values;
    }
}

}  // namespace kvn
