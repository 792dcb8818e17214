#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kvn/dictionary.hpp"
#include "kvn/estimator.hpp"
#include "kvn/propagate.hpp"
#include "kvn/spectral.hpp"

namespace kvn {

struct SourceConfig {
    enum class Kind { Samples, Quadrature, Trajectories };
    Kind kind = Kind::Samples;
    std::size_t m = 0;
    std::uint64_t seed = 0;
    int grid = 0;
    std::string file;
    double h = 0.0;

    bool operator==(const SourceConfig&) const = default;
};

struct SpectrumConfig {
    double threshold = kDefaultResidualThreshold;
    std::string route = "direct";  // direct | skew
    std::vector<int> eigenfunctions;
    int grid = 101;

    bool operator==(const SpectrumConfig&) const = default;
};

struct InitialStateConfig {
    std::string kind = "gaussians";  // gaussians | lv_invariant | law_affine
    std::vector<std::vector<double>> centers;
    double bandwidth = 0.15;
    std::vector<double> coefficients;  // law_affine: f0 * (c0 + c1 x1 + ... )

    bool operator==(const InitialStateConfig&) const = default;
};

struct PropagationConfig {
    std::vector<double> times;
    InitialStateConfig initial;
    int grid = 101;
    std::size_t particles = 0;
    std::uint64_t seed = 0;
    double dt = kDefaultStep;
    std::string name;

    bool operator==(const PropagationConfig&) const = default;
};

struct CircuitConfig {
    double t = 1.0;
    double tolerance = 1e-8;  // relative to max |Qt|
    std::string format = "text";  // text | qasm-lite

    bool operator==(const CircuitConfig&) const = default;
};

struct ConvergeConfig {
    std::vector<double> m_exponents{2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
    int seeds = 10;
    std::uint64_t master_seed = 0;

    bool operator==(const ConvergeConfig&) const = default;
};

struct ExperimentConfig {
    std::string system;
    json basis;
    SourceConfig source;
    double truncation = kDefaultTruncation;
    std::string outputs = ".";
    std::optional<SpectrumConfig> spectrum;
    std::optional<PropagationConfig> propagation;
    std::optional<CircuitConfig> circuit;
    std::optional<ConvergeConfig> converge;

    bool operator==(const ExperimentConfig&) const = default;
};

// Throws ConfigError naming the offending field.
ExperimentConfig config_from_json(const json& j);
json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// Builds the initial wavefunction target for a propagation block.
ComplexFunction initial_state(const InitialStateConfig& init, const BenchmarkSystem& sys);

}  // namespace kvn
