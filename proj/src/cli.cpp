#include "kvn/cli.hpp"

#include <CLI11.hpp>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "kvn/errors.hpp"
#include "kvn/io.hpp"
#include "kvn/qcircuit.hpp"

namespace kvn::cli {

namespace fs = std::filesystem;

int exit_code_for_current_exception(std::ostream& err) {
    try {
        throw;
    } catch (const StructureNotFound& e) {
        err << "structure not found: " << e.what() << '\n';
        return kStructureNotFound;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const PreconditionError& e) {
        err << "precondition violated: " << e.what() << '\n';
        return kConfigError;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kConfigError;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumericalFailure;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kNumericalFailure;
    }
}

namespace {

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
    return (fs::path(cfg.outputs) / name).string();
}

void write_json(const std::string& path, const json& j) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
}

// Snapshot pairs: header line, then rows x1..xd,y1..yd.
std::pair<Points, Points> read_snapshots(const std::string& path, int d) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("cannot open trajectory file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<double> vals;
    std::size_t pos = text.find('\n');
    if (pos == std::string::npos) throw ParseError("trajectory file has no data rows", text.size());
    ++pos;
    std::size_t rows = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        if (eol > pos) {
            const char* p = text.data() + pos;
            const char* end = text.data() + eol;
            for (int c = 0; c < 2 * d; ++c) {
                double v;
                auto r = std::from_chars(p, end, v);
                if (r.ec != std::errc()) throw ParseError("bad number in trajectory file", static_cast<std::uint64_t>(p - text.data()));
                vals.push_back(v);
                p = r.ptr;
                if (c + 1 < 2 * d) {
                    if (p >= end || *p != ',') throw ParseError("expected ',' in trajectory file", static_cast<std::uint64_t>(p - text.data()));
                    ++p;
                }
            }
            if (p != end && !(p + 1 == end && *p == '\r'))
                throw ParseError("unexpected trailing field in trajectory file", static_cast<std::uint64_t>(p - text.data()));
            ++rows;
        }
        pos = eol + 1;
    }
    Points x(d, static_cast<Eigen::Index>(rows)), y(d, static_cast<Eigen::Index>(rows));
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < d; ++c) {
            x(c, static_cast<Eigen::Index>(r)) = vals[r * 2 * d + static_cast<std::size_t>(c)];
            y(c, static_cast<Eigen::Index>(r)) = vals[r * 2 * d + static_cast<std::size_t>(d + c)];
        }
    return {x, y};
}

// Training points and weights implied by the source block.
QuadratureRule source_points(const ExperimentConfig& cfg, const BenchmarkSystem& sys) {
    const SourceConfig& s = cfg.source;
    QuadratureRule rule;
    switch (s.kind) {
        case SourceConfig::Kind::Samples:
            if (s.m < 1) throw PreconditionError("source.m >= 1 required (got m = 0)");
            rule.points = sample_uniform(sys.domain, s.m, s.seed);
            rule.weights = Vec::Constant(static_cast<Eigen::Index>(s.m), 1.0 / static_cast<double>(s.m));
            break;
        case SourceConfig::Kind::Quadrature:
            rule = midpoint_rule(sys.domain, s.grid);
            break;
        case SourceConfig::Kind::Trajectories: {
            auto [x, y] = read_snapshots(s.file, sys.dim());
            rule.points = x;
            rule.weights = Vec::Constant(x.cols(), 1.0 / static_cast<double>(std::max<Eigen::Index>(1, x.cols())));
            break;
        }
    }
    return rule;
}

struct Loaded {
    BenchmarkSystem sys;
    DictionaryPtr dict;
    Archive archive;
    std::shared_ptr<WhitenedRepresentation> white;
};

Loaded load_for(const ExperimentConfig& cfg, const std::string& archive_path) {
    Loaded l;
    l.archive = load_matrices(archive_path);
    l.sys = make_system(cfg.system);
    l.dict = build_dictionary(cfg.basis, l.sys);
    const json& h = l.archive.header;
    if (h.contains("system") && h["system"] != cfg.system)
        throw ConfigError("archive was built for system " + h["system"].dump() + ", config names " + cfg.system);
    if (h.contains("basis") && h["basis"] != l.dict->description())
        throw ConfigError("archive basis " + h["basis"].dump() + " differs from the config basis");
    if (l.archive.gen.n() != l.dict->size()) throw ConfigError("archive size does not match the dictionary");
    l.white = std::make_shared<WhitenedRepresentation>(l.archive.white);
    return l;
}

double regression_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

}  // namespace

EstimateResult cmd_estimate(const ExperimentConfig& cfg, const std::optional<std::string>& archive) {
    BenchmarkSystem sys = make_system(cfg.system);
    DictionaryPtr dict = build_dictionary(cfg.basis, sys);
    GramMatrices gram;
    if (cfg.source.kind == SourceConfig::Kind::Trajectories) {
        if (!(cfg.source.h > 0)) throw PreconditionError("source.h > 0 required");
        auto [x, y] = read_snapshots(cfg.source.file, sys.dim());
        gram = gram_from_data(assemble_from_trajectories(*dict, x, y, cfg.source.h));
    } else {
        QuadratureRule rule = source_points(cfg, sys);
        gram = accumulate_gram(*dict, sys.field, rule.points, rule.weights);
    }
    GeneratorMatrices gen = estimate_generators(gram, cfg.truncation);
    WhitenedRepresentation white = whiten(gen);

    ensure_directory(cfg.outputs);
    EstimateResult res;
    res.archive = archive ? *archive : out_path(cfg, "matrices.kvn");
    json meta = {{"system", cfg.system}, {"basis", dict->description()}, {"source", config_to_json(cfg)["source"]}};
    save_matrices(gen, white, res.archive, meta);

    res.summary = {{"n", gen.n()},
                   {"k", white.k()},
                   {"m", gen.m},
                   {"rank", gen.rank},
                   {"skew_defect", skew_defect(white.Qt)},
                   {"gram_condition", gram_condition(gen)},
                   {"system", cfg.system},
                   {"archive", res.archive}};
    write_json(out_path(cfg, "summary.json"), res.summary);
    return res;
}

SpectrumOutputs cmd_spectrum(const ExperimentConfig& cfg, const std::string& archive) {
    Loaded l = load_for(cfg, archive);
    const SpectrumConfig sc = cfg.spectrum.value_or(SpectrumConfig{});
    const GeneratorMatrices& gen = l.archive.gen;
    SpectrumOutputs out;
    if (sc.route == "direct" && gen.has_kvn()) {
        out.spectrum = kvn_direct_spectrum(gen, *l.white);
    } else {
        out.spectrum = eig_skew(l.white->Qt);
        if (gen.has_kvn()) score_spectrum(out.spectrum, gen, l.white.get());
    }
    out.spectrum.basis_ref = l.dict->description();
    ensure_directory(cfg.outputs);
    write_spectrum_csv(out_path(cfg, "spectrum.csv"), out.spectrum);
    if (!out.spectrum.residuals.empty()) {
        out.filtered = filter_spectrum(out.spectrum, sc.threshold);
        write_spectrum_csv(out_path(cfg, "spectrum_filtered.csv"), out.filtered);
    }
    const SpectrumResult& src = out.spectrum.residuals.empty() ? out.spectrum : out.filtered;
    for (int j : sc.eigenfunctions) {
        if (j < 0 || static_cast<std::size_t>(j) >= src.size())
            throw ConfigError("spectrum.eigenfunctions index " + std::to_string(j) + " out of range");
        write_eigenfunction_csv(out_path(cfg, "eigenfunction_" + std::to_string(j) + ".csv"), src, *l.dict,
                                l.white.get(), static_cast<std::size_t>(j), l.sys.domain, sc.grid);
    }
    return out;
}

ConvergeResult run_convergence(const ExperimentConfig& cfg) {
    const ConvergeConfig cc = cfg.converge.value_or(ConvergeConfig{});
    BenchmarkSystem sys = make_system(cfg.system);
    DictionaryPtr dict = build_dictionary(cfg.basis, sys);
    const json desc = dict->description();
    if (cfg.system != "undamped_oscillator" || desc.value("basis", "") != "monomial" ||
        desc.value("max_degree", -1) != 2 || desc.value("taper", "") != "conservation_law")
        throw ConfigError("converge needs the undamped oscillator with the degree-2 tapered monomial basis");
    const Mat Qref = reference_oscillator_galerkin().Q;
    const double w1 = std::sqrt(2.0), w2 = 2.0 * std::sqrt(2.0);

    ConvergeResult res;
    std::vector<double> lm, le, le1, le2;
    for (std::size_t i = 0; i < cc.m_exponents.size(); ++i) {
        const auto m = static_cast<std::size_t>(std::llround(std::pow(10.0, cc.m_exponents[i])));
        if (m < 1) throw ConfigError("converge.m_exponents produce m < 1");
        double se = 0, se1 = 0, se2 = 0;
        for (int s = 0; s < cc.seeds; ++s) {
            ConvergeRow row;
            row.m = m;
            row.seed = derive_seed(cc.master_seed, i, static_cast<std::uint64_t>(s));
            Points pts = sample_uniform(sys.domain, m, row.seed);
            Vec w = Vec::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
            GeneratorMatrices gen = estimate_generators(accumulate_gram(*dict, sys.field, pts, w), cfg.truncation);
            row.matrix_error = (gen.Q - Qref).norm();
            SpectrumResult sp = eig_skew(whiten(gen).Qt);
            std::vector<double> pos;
            for (const cd& nu : sp.eigenvalues)
                if (nu.imag() > 0) pos.push_back(nu.imag());
            std::sort(pos.begin(), pos.end());
            if (pos.size() < 2) throw NumericalError("converge: fewer than two positive frequencies");
            row.eig_error_1 = std::abs(pos[pos.size() - 2] - w1);
            row.eig_error_2 = std::abs(pos[pos.size() - 1] - w2);
            se += row.matrix_error;
            se1 += row.eig_error_1;
            se2 += row.eig_error_2;
            res.rows.push_back(row);
        }
        lm.push_back(std::log10(static_cast<double>(m)));
        le.push_back(std::log10(se / cc.seeds));
        le1.push_back(std::log10(se1 / cc.seeds));
        le2.push_back(std::log10(se2 / cc.seeds));
    }
    if (lm.size() >= 2) {
        res.slope_matrix = regression_slope(lm, le);
        res.slope_eig_1 = regression_slope(lm, le1);
        res.slope_eig_2 = regression_slope(lm, le2);
    }
    return res;
}

ConvergeResult cmd_converge(const ExperimentConfig& cfg) {
    ConvergeResult res = run_convergence(cfg);
    ensure_directory(cfg.outputs);
    auto out = open_output(out_path(cfg, "convergence.csv"));
    write_csv_row(out, {"m", "seed", "matrix_error", "eig_error_1", "eig_error_2"});
    for (const auto& r : res.rows)
        write_csv_row(out, {std::to_string(r.m), std::to_string(r.seed), format_double(r.matrix_error),
                            format_double(r.eig_error_1), format_double(r.eig_error_2)});
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    write_csv_row(out, {"slope", "", opt(res.slope_matrix), opt(res.slope_eig_1), opt(res.slope_eig_2)});
    return res;
}

PropagateResult cmd_propagate(const ExperimentConfig& cfg, const std::string& archive) {
    Loaded l = load_for(cfg, archive);
    PropagateResult res;
    if (!cfg.propagation) throw ConfigError("config.propagation block is required");
    const PropagationConfig& pc = *cfg.propagation;
    if (pc.times.empty()) return res;

    ComplexFunction target = initial_state(pc.initial, l.sys);
    QuadratureRule rule = source_points(cfg, l.sys);
    FitResult fit = fit_wavefunction(l.dict, l.white, target, rule.points, cfg.truncation);
    res.fit_residual = fit.relative_residual;
    Propagator prop(l.white->Qt);
    const std::string name = pc.name.empty() ? cfg.system : pc.name;
    ensure_directory(cfg.outputs);

    Points particles;
    double particle_time = 0.0;
    if (pc.particles > 0) {
        // Bound |psi0|^2 by its maximum on a fine lattice with a safety factor.
        double bound = 0.0;
        const Box& box = l.sys.domain.box;
        Vec x(l.sys.dim());
        for (int a = 0; a <= 200; ++a)
            for (int b = 0; b <= 200; ++b) {
                x[0] = box.lower[0] + (box.upper[0] - box.lower[0]) * a / 200.0;
                x[1] = box.lower[1] + (box.upper[1] - box.lower[1]) * b / 200.0;
                if (l.sys.domain.contains(x)) bound = std::max(bound, std::norm(target(x)));
            }
        particles = sample_density(
            l.sys.domain, [&](VecIn y) { return std::norm(target(y)); }, 1.5 * bound, pc.particles, pc.seed);
    }

    json report = {{"fit_residual", fit.relative_residual}, {"rank", fit.rank}, {"snapshots", json::array()}};
    for (double t : pc.times) {
        Wavefunction psi = prop.evolve(fit.psi, t);
        const std::string file = out_path(cfg, snapshot_filename(name, t));
        write_snapshot_csv(file, psi, l.sys.domain, pc.grid);
        res.files.push_back(file);
        json snap = {{"t", t}, {"file", file}, {"coeff_norm", psi.coeffs.norm()}};
        if (pc.particles > 0) {
            particles = particle_ensemble(l.sys, particles, t - particle_time, pc.dt);
            particle_time = t;
            const std::string pfile = out_path(cfg, snapshot_filename(name + "_particles", t));
            write_points_csv(pfile, particles);
            res.files.push_back(pfile);
            snap["particles"] = pfile;
        }
        report["snapshots"].push_back(snap);
    }
    write_json(out_path(cfg, "propagation.json"), report);
    return res;
}

CircuitResult cmd_circuit(const ExperimentConfig& cfg, const std::string& archive) {
    Archive ar = load_matrices(archive);
    const CircuitConfig cc = cfg.circuit.value_or(CircuitConfig{});
    const Mat& Qt = ar.white.Qt;
    const double scale = std::max(1.0, Qt.size() ? Qt.cwiseAbs().maxCoeff() : 0.0);
    BlockStructure bs = detect_structure(Qt, cc.tolerance * scale);
    auto [one, two] = decompose(bs, cc.t);
    Mat U1 = simulate(one);
    Mat U2 = simulate(two);
    Mat assembled = assemble_propagator(bs, U1, U2);
    CMat exact = Propagator(Qt).matrix(cc.t);
    CircuitResult res;
    res.max_error = (assembled.cast<cd>() - exact).cwiseAbs().maxCoeff();
    const double orth = std::max((U1.transpose() * U1 - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(),
                                 (U2.transpose() * U2 - Mat::Identity(4, 4)).cwiseAbs().maxCoeff());

    ensure_directory(cfg.outputs);
    const CircuitFormat fmt = cc.format == "qasm-lite" ? CircuitFormat::QasmLite : CircuitFormat::Text;
    const std::string ext = fmt == CircuitFormat::QasmLite ? ".qasm" : ".txt";
    const CircuitHeader header{cc.t, bs.a, bs.z};
    const std::string f1 = out_path(cfg, "circuit_block2" + ext);
    const std::string f2 = out_path(cfg, "circuit_block4" + ext);
    export_circuit(one, f1, header, fmt);
    export_circuit(two, f2, header, fmt);
    res.report = {{"t", cc.t},
                  {"a", bs.a},
                  {"z", bs.z},
                  {"permutation", bs.permutation},
                  {"signs", bs.signs},
                  {"max_error", res.max_error},
                  {"orthogonality_defect", orth},
                  {"files", {f1, f2}}};
    write_json(out_path(cfg, "circuit_report.json"), res.report);
    return res;
}

json cmd_verify(const std::string& archive) {
    Archive ar = load_matrices(archive);
    const GeneratorMatrices& gen = ar.gen;
    const WhitenedRepresentation& w = ar.white;
    json checks = json::array();
    bool all = true;
    auto check = [&](const std::string& name, double value, double tol) {
        bool ok = std::isfinite(value) && value <= tol;
        all = all && ok;
        checks.push_back({{"name", name}, {"value", value}, {"tolerance", tol}, {"pass", ok}});
    };
    const double gmax = std::max(1e-300, gen.G.cwiseAbs().maxCoeff());
    check("gram_symmetry", (gen.G - gen.G.transpose()).cwiseAbs().maxCoeff() / gmax, 1e-12);
    GramSpectrum gs = gram_spectrum(gen.G, gen.truncation);
    check("gram_rank_matches", std::abs(static_cast<double>(gs.values.size()) - gen.rank), 0.0);
    check("gram_retained_positive", gs.values.minCoeff() > 0 ? 0.0 : 1.0, 0.0);
    GeneratorMatrices again = estimate_generators(GramMatrices{gen.G, gen.A, gen.B, gen.C, gen.m, gen.has_kvn()},
                                                  gen.truncation);
    const double qscale = std::max(1.0, gen.Q.cwiseAbs().maxCoeff());
    check("q_reproducible", (again.Q - gen.Q).cwiseAbs().maxCoeff() / qscale, 1e-12);
    check("qt_skew", skew_defect(w.Qt), 1e-10);
    // Whitening is exact only up to eps times the Gram condition number.
    const double cond = gs.values.maxCoeff() / gs.values.minCoeff();
    check("whitening_identity", (w.T.transpose() * gen.G * w.T - Mat::Identity(w.k(), w.k())).cwiseAbs().maxCoeff(),
          std::max(1e-10, 1e3 * std::numeric_limits<double>::epsilon() * cond));
    const double sim_scale = std::max(1e-300, gen.Q.norm() * w.T.norm());
    check("similarity_QT_TQt", (gen.Q * w.T - w.T * w.Qt).norm() / sim_scale,
          std::max(1e-10, 1e3 * std::numeric_limits<double>::epsilon() * cond));
    SpectrumResult sp = eig_skew(w.Qt);
    double closure = 0.0;
    for (std::size_t j = 0; j < sp.size(); ++j) {
        double best = INFINITY;
        for (std::size_t i = 0; i < sp.size(); ++i) best = std::min(best, std::abs(sp.eigenvalues[i] + sp.eigenvalues[j]));
        closure = std::max(closure, best);
    }
    check("spectrum_negation_closed", closure, 1e-12);
    return {{"archive", archive}, {"checks", checks}, {"pass", all}};
}

int run(int argc, char** argv) {
    CLI::App app{"Koopman / Perron-Frobenius / KvN generator estimation and propagation"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker cap for assembly (fallback: KVN_THREADS)");

    std::string config_path, archive_path, out_dir;
    auto add_common = [&](CLI::App* sub, bool needs_config, bool needs_archive) {
        auto* c = sub->add_option("--config", config_path, "experiment config (JSON)");
        if (needs_config) c->required();
        auto* a = sub->add_option("--archive", archive_path, "matrix archive path (default: <outputs>/matrices.kvn)");
        if (needs_archive) a->required();
        sub->add_option("--out", out_dir, "output directory (overrides config.outputs)");
    };
    auto* est = app.add_subcommand("estimate", "assemble and store generator matrices");
    add_common(est, true, false);
    auto* spec = app.add_subcommand("spectrum", "eigenvalues, residuals and eigenfunctions");
    add_common(spec, true, false);
    auto* conv = app.add_subcommand("converge", "Monte Carlo convergence study");
    add_common(conv, true, false);
    auto* prop = app.add_subcommand("propagate", "wavefunction and density snapshots");
    add_common(prop, true, false);
    auto* circ = app.add_subcommand("circuit", "compile exp(t Qt) into gates");
    add_common(circ, true, false);
    auto* ver = app.add_subcommand("verify", "property checks on an archive");
    add_common(ver, false, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (threads <= 0) {
            if (const char* env = std::getenv("KVN_THREADS")) threads = std::atoi(env);
        }
        set_thread_count(threads > 0 ? threads : 1);

        if (ver->parsed()) {
            json report = cmd_verify(archive_path);
            std::cout << report.dump(2) << '\n';
            if (!out_dir.empty()) {
                ensure_directory(out_dir);
                write_json((fs::path(out_dir) / "verify.json").string(), report);
            }
            return report["pass"].get<bool>() ? kOk : kNumericalFailure;
        }

        ExperimentConfig cfg = load_config(config_path);
        if (!out_dir.empty()) cfg.outputs = out_dir;
        if (archive_path.empty() && !est->parsed()) archive_path = out_path(cfg, "matrices.kvn");

        if (est->parsed()) {
            auto res = cmd_estimate(cfg, archive_path.empty() ? std::nullopt : std::optional<std::string>(archive_path));
            std::cout << res.summary.dump(2) << '\n';
        } else if (spec->parsed()) {
            auto res = cmd_spectrum(cfg, archive_path);
            std::cout << "eigenvalues: " << res.spectrum.size() << ", filtered: " << res.filtered.size() << '\n';
        } else if (conv->parsed()) {
            auto res = cmd_converge(cfg);
            auto show = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("n/a"); };
            std::cout << "slopes: matrix " << show(res.slope_matrix) << ", eig1 " << show(res.slope_eig_1)
                      << ", eig2 " << show(res.slope_eig_2) << '\n';
        } else if (prop->parsed()) {
            auto res = cmd_propagate(cfg, archive_path);
            std::cout << "fit residual " << format_double(res.fit_residual) << ", files written: " << res.files.size()
                      << '\n';
        } else if (circ->parsed()) {
            auto res = cmd_circuit(cfg, archive_path);
            std::cout << res.report.dump(2) << '\n';
        }
        return kOk;
    } catch (...) {
        return exit_code_for_current_exception(std::cerr);
    }
}

}  // namespace kvn::cli
