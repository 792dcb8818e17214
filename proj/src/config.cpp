#include "kvn/config.hpp"

#include <cmath>
#include <fstream>

#include "kvn/errors.hpp"

namespace kvn {

namespace {

template <class T>
T field(const json& j, const char* block, const char* key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string(block) + "." + key + " has the wrong type");
    }
}

template <class T>
T required(const json& j, const char* block, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string(block) + "." + key + " is required");
    return field<T>(j, block, key, T{});
}

const json& object_block(const json& j, const char* key) {
    const json& b = j.at(key);
    if (!b.is_object()) throw ConfigError(std::string(key) + " must be an object");
    return b;
}

SourceConfig source_from_json(const json& j) {
    SourceConfig s;
    const std::string kind = required<std::string>(j, "source", "kind");
    if (kind == "samples") {
        s.kind = SourceConfig::Kind::Samples;
        s.m = required<std::size_t>(j, "source", "m");
        s.seed = field<std::uint64_t>(j, "source", "seed", 0);
    } else if (kind == "quadrature") {
        s.kind = SourceConfig::Kind::Quadrature;
        s.grid = required<int>(j, "source", "grid");
    } else if (kind == "trajectories") {
        s.kind = SourceConfig::Kind::Trajectories;
        s.file = required<std::string>(j, "source", "file");
        s.h = required<double>(j, "source", "h");
    } else {
        throw ConfigError("source.kind must be samples, quadrature or trajectories");
    }
    return s;
}

json source_to_json(const SourceConfig& s) {
    switch (s.kind) {
        case SourceConfig::Kind::Samples:
            return {{"kind", "samples"}, {"m", s.m}, {"seed", s.seed}};
        case SourceConfig::Kind::Quadrature:
            return {{"kind", "quadrature"}, {"grid", s.grid}};
        case SourceConfig::Kind::Trajectories:
        default:
            return {{"kind", "trajectories"}, {"file", s.file}, {"h", s.h}};
    }
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig cfg;
    cfg.system = required<std::string>(j, "config", "system");
    if (!j.contains("basis")) throw ConfigError("config.basis is required");
    cfg.basis = object_block(j, "basis");
    if (!j.contains("source")) throw ConfigError("config.source is required");
    cfg.source = source_from_json(object_block(j, "source"));
    cfg.truncation = field<double>(j, "config", "truncation", kDefaultTruncation);
    if (!(cfg.truncation >= 0)) throw ConfigError("config.truncation must be >= 0");
    cfg.outputs = field<std::string>(j, "config", "outputs", ".");

    if (j.contains("spectrum")) {
        const json& b = object_block(j, "spectrum");
        SpectrumConfig s;
        s.threshold = field<double>(b, "spectrum", "threshold", s.threshold);
        s.route = field<std::string>(b, "spectrum", "route", s.route);
        if (s.route != "direct" && s.route != "skew") throw ConfigError("spectrum.route must be direct or skew");
        s.eigenfunctions = field<std::vector<int>>(b, "spectrum", "eigenfunctions", {});
        s.grid = field<int>(b, "spectrum", "grid", s.grid);
        cfg.spectrum = s;
    }
    if (j.contains("propagation")) {
        const json& b = object_block(j, "propagation");
        PropagationConfig p;
        p.times = field<std::vector<double>>(b, "propagation", "times", {});
        p.grid = field<int>(b, "propagation", "grid", p.grid);
        p.particles = field<std::size_t>(b, "propagation", "particles", 0);
        p.seed = field<std::uint64_t>(b, "propagation", "seed", 0);
        p.dt = field<double>(b, "propagation", "dt", p.dt);
        p.name = field<std::string>(b, "propagation", "name", "");
        if (b.contains("initial")) {
            const json& i = object_block(b, "initial");
            p.initial.kind = field<std::string>(i, "propagation.initial", "kind", p.initial.kind);
            p.initial.centers = field<std::vector<std::vector<double>>>(i, "propagation.initial", "centers", {});
            p.initial.bandwidth = field<double>(i, "propagation.initial", "bandwidth", p.initial.bandwidth);
            p.initial.coefficients = field<std::vector<double>>(i, "propagation.initial", "coefficients", {});
        }
        cfg.propagation = p;
    }
    if (j.contains("circuit")) {
        const json& b = object_block(j, "circuit");
        CircuitConfig c;
        c.t = field<double>(b, "circuit", "t", c.t);
        c.tolerance = field<double>(b, "circuit", "tolerance", c.tolerance);
        c.format = field<std::string>(b, "circuit", "format", c.format);
        if (c.format != "text" && c.format != "qasm-lite") throw ConfigError("circuit.format must be text or qasm-lite");
        cfg.circuit = c;
    }
    if (j.contains("converge")) {
        const json& b = object_block(j, "converge");
        ConvergeConfig c;
        c.m_exponents = field<std::vector<double>>(b, "converge", "m_exponents", c.m_exponents);
        c.seeds = field<int>(b, "converge", "seeds", c.seeds);
        c.master_seed = field<std::uint64_t>(b, "converge", "master_seed", 0);
        if (c.seeds < 1) throw ConfigError("converge.seeds must be >= 1");
        cfg.converge = c;
    }
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j = {{"system", cfg.system},
              {"basis", cfg.basis},
              {"source", source_to_json(cfg.source)},
              {"truncation", cfg.truncation},
              {"outputs", cfg.outputs}};
    if (cfg.spectrum) {
        const auto& s = *cfg.spectrum;
        j["spectrum"] = {{"threshold", s.threshold}, {"route", s.route}, {"eigenfunctions", s.eigenfunctions},
                         {"grid", s.grid}};
    }
    if (cfg.propagation) {
        const auto& p = *cfg.propagation;
        j["propagation"] = {{"times", p.times},
                            {"grid", p.grid},
                            {"particles", p.particles},
                            {"seed", p.seed},
                            {"dt", p.dt},
                            {"name", p.name},
                            {"initial",
                             {{"kind", p.initial.kind},
                              {"centers", p.initial.centers},
                              {"bandwidth", p.initial.bandwidth},
                              {"coefficients", p.initial.coefficients}}}};
    }
    if (cfg.circuit) {
        const auto& c = *cfg.circuit;
        j["circuit"] = {{"t", c.t}, {"tolerance", c.tolerance}, {"format", c.format}};
    }
    if (cfg.converge) {
        const auto& c = *cfg.converge;
        j["converge"] = {{"m_exponents", c.m_exponents}, {"seeds", c.seeds}, {"master_seed", c.master_seed}};
    }
    return j;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config is not valid JSON: ") + e.what(), e.byte);
    }
    return config_from_json(j);
}

ComplexFunction initial_state(const InitialStateConfig& init, const BenchmarkSystem& sys) {
    if (init.kind == "gaussians") {
        if (init.centers.empty()) throw ConfigError("propagation.initial.centers must not be empty");
        std::vector<Vec> centers;
        for (const auto& c : init.centers) {
            if (static_cast<int>(c.size()) != sys.dim())
                throw ConfigError("propagation.initial.centers entries must have the system dimension");
            centers.push_back(Eigen::Map<const Vec>(c.data(), sys.dim()));
        }
        return gaussian_superposition(centers, init.bandwidth);
    }
    if (init.kind == "lv_invariant") {
        if (!sys.law) throw ConfigError("lv_invariant initial state needs a conservation law");
        auto law = *sys.law;
        return [law](VecIn x) {
            double f = law.value(x);
            if (f <= 0 || x[0] <= 0 || x[1] <= 0) return cd(0.0, 0.0);
            return cd(std::sqrt(f / (x[0] * x[1])), 0.0);
        };
    }
    if (init.kind == "law_affine") {
        if (static_cast<int>(init.coefficients.size()) != sys.dim() + 1)
            throw ConfigError("propagation.initial.coefficients must have d + 1 entries");
        ScalarField taper = sys.boundary_taper();
        std::vector<double> c = init.coefficients;
        return [taper, c](VecIn x) {
            double a = c[0];
            for (Eigen::Index i = 0; i < x.size(); ++i) a += c[static_cast<std::size_t>(i) + 1] * x[i];
            return cd(taper.value(x) * a, 0.0);
        };
    }
    throw ConfigError("unknown propagation.initial.kind '" + init.kind + "'");
}

}  // namespace kvn
