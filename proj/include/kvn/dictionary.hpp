#pragma once

#include <cstdint>
#include <json.hpp>
#include <memory>
#include <optional>
#include <vector>

#include "kvn/systems.hpp"
#include "kvn/types.hpp"

namespace kvn {

using json = nlohmann::json;

enum class Generator { Koopman, PerronFrobenius, KvN };

// Basis phi_1..phi_n on R^d with analytic gradients.
class Dictionary {
public:
    virtual ~Dictionary() = default;

    virtual int size() const = 0;
    virtual int dim() const = 0;
    virtual void eval(VecIn x, VecOut values) const = 0;
    // Values and gradient rows (n x d) in one pass.
    virtual void eval_grad(VecIn x, VecOut values, MatOut grads) const = 0;
    virtual json description() const = 0;

    Vec operator()(VecIn x) const;
    Mat gradient(VecIn x) const;
};

using DictionaryPtr = std::shared_ptr<const Dictionary>;

// taper(x) * x^alpha_k, graded lexicographic exponents.
class MonomialTapered final : public Dictionary {
public:
    MonomialTapered(int dim, int max_degree, ScalarField taper, json taper_desc);

    int size() const override { return static_cast<int>(exponents_.size()); }
    int dim() const override { return dim_; }
    void eval(VecIn x, VecOut values) const override;
    void eval_grad(VecIn x, VecOut values, MatOut grads) const override;
    json description() const override;

    const std::vector<std::vector<int>>& exponents() const { return exponents_; }

private:
    int dim_;
    int max_degree_;
    ScalarField taper_;
    json taper_desc_;
    std::vector<std::vector<int>> exponents_;
};

// taper(x) * cos(w_i . x + b_i).
class RffTapered final : public Dictionary {
public:
    // frequencies: n x d, phases: n.
    RffTapered(Mat frequencies, Vec phases, ScalarField taper, json desc);

    int size() const override { return static_cast<int>(phases_.size()); }
    int dim() const override { return static_cast<int>(freq_.cols()); }
    void eval(VecIn x, VecOut values) const override;
    void eval_grad(VecIn x, VecOut values, MatOut grads) const override;
    json description() const override { return desc_; }

    const Mat& frequencies() const { return freq_; }
    const Vec& phases() const { return phases_; }

private:
    Mat freq_;
    Vec phases_;
    ScalarField taper_;
    json desc_;
};

struct MonomialTaperedSpec {
    int max_degree = 2;
    ConservationLaw law;
};

enum class TaperKind { ConservationLaw, Exponential };

struct RffTaperedSpec {
    int n = 300;
    double bandwidth = 0.5;
    std::uint64_t seed = 0;
    TaperKind taper = TaperKind::ConservationLaw;
    double taper_k = 5000.0;
};

std::vector<std::vector<int>> graded_lex_exponents(int dim, int max_degree);

std::shared_ptr<MonomialTapered> build_monomial_tapered(const MonomialTaperedSpec& spec, int dim);

// Frequencies are drawn first (row by row, coordinate by coordinate) from
// N(0, 1/bandwidth^2), then the n phases from U[0, 2pi), all from one
// mt19937_64(seed) stream.
std::shared_ptr<RffTapered> build_rff_tapered(const RffTaperedSpec& spec,
                                              const std::optional<ConservationLaw>& law, int dim);

// exp(-1 / (k f0^2)), exactly zero where f0 <= 1e-12.
ScalarField exponential_taper(const ConservationLaw& law, double k);

// Builds a dictionary from its JSON description for the given system. Systems
// without a conservation law use c - g(x) as the conservation-style taper.
DictionaryPtr build_dictionary(const json& spec, const BenchmarkSystem& sys);

// Generator applied to one scalar function given its value and gradient at x.
template <class S>
S generator_value(const VectorField& field, Generator which, VecIn x, S value,
                  const Eigen::Matrix<S, Eigen::Dynamic, 1>& grad) {
    Vec bx = field(x);
    S directional = (grad.array() * bx.template cast<S>().array()).sum();
    switch (which) {
        case Generator::Koopman:
            return directional;
        case Generator::PerronFrobenius:
            return -directional - field.div_b(x) * value;
        case Generator::KvN:
        default:
            return -directional - 0.5 * field.div_b(x) * value;
    }
}

// (L phi_k)(x), (L* phi_k)(x) or (Q phi_k)(x) for every basis function.
Vec apply_generator(const Dictionary& dict, const VectorField& field, Generator which, VecIn x);

}  // namespace kvn
