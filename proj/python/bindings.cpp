#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kvn/cli.hpp"
#include "kvn/dictionary.hpp"
#include "kvn/errors.hpp"
#include "kvn/estimator.hpp"
#include "kvn/propagate.hpp"
#include "kvn/qcircuit.hpp"
#include "kvn/spectral.hpp"
#include "kvn/systems.hpp"

namespace py = pybind11;
using namespace kvn;

namespace {

// JSON crosses the boundary as text; the Python wrapper does the dict conversion.
json parse(const std::string& s) { return json::parse(s); }

py::dict spectrum_dict(const SpectrumResult& s) {
    py::dict d;
    d["eigenvalues"] = s.eigenvalues;
    d["eigenvectors"] = s.eigenvectors;
    d["residuals"] = s.residuals;
    return d;
}

GateList gates_from_tuples(int qubits, const std::vector<py::tuple>& items) {
    GateList g;
    g.num_qubits = qubits;
    for (const auto& t : items) {
        auto kind = t[0].cast<std::string>();
        if (kind != "ry" && kind != "cry" && kind != "x") throw PreconditionError("unknown gate '" + kind + "'");
        Gate gate;
        gate.kind = kind == "ry" ? GateKind::Ry : kind == "cry" ? GateKind::CRy : GateKind::X;
        gate.target = t[1].cast<int>();
        if (!t[2].is_none()) gate.control = t[2].cast<int>();
        gate.angle = t[3].cast<double>();
        g.gates.push_back(gate);
    }
    return g;
}

py::list gates_to_tuples(const GateList& g) {
    py::list out;
    for (const auto& gate : g.gates) {
        const char* kind = gate.kind == GateKind::Ry ? "ry" : gate.kind == GateKind::CRy ? "cry" : "x";
        py::object control = gate.control ? py::object(py::int_(*gate.control)) : py::none();
        out.append(py::make_tuple(kind, gate.target, control, gate.angle));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_kvn, m) {
    m.doc() = "Koopman-von Neumann generator estimation, spectra, propagation and circuits";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<PreconditionError>(m, "PreconditionError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<ParseError>(m, "ParseError", base);
    py::register_exception<StructureNotFound>(m, "StructureNotFound", base);
    py::register_exception<NumericalError>(m, "NumericalError", base);

    py::class_<BenchmarkSystem>(m, "System")
        .def_readonly("name", &BenchmarkSystem::name)
        .def_property_readonly("dim", &BenchmarkSystem::dim)
        .def("field", [](const BenchmarkSystem& s, const Vec& x) { return s.field(x); })
        .def("divergence", [](const BenchmarkSystem& s, const Vec& x) { return s.field.div_b(x); })
        .def("conserved", [](const BenchmarkSystem& s, const Vec& x) -> std::optional<double> {
            if (!s.law) return std::nullopt;
            return s.law->value(x);
        })
        .def("contains", [](const BenchmarkSystem& s, const Vec& x) { return s.domain.contains(x); })
        .def("flow", [](const BenchmarkSystem& s, const Vec& x, double t, double dt) { return flow(s, x, t, dt); },
             py::arg("x"), py::arg("t"), py::arg("dt") = kDefaultStep)
        .def("sample", [](const BenchmarkSystem& s, std::size_t count, std::uint64_t seed) {
            return sample_uniform(s.domain, count, seed);
        }, py::arg("m"), py::arg("seed"))
        .def("quadrature", [](const BenchmarkSystem& s, int grid) {
            QuadratureRule r = midpoint_rule(s.domain, grid);
            return py::make_tuple(r.points, r.weights);
        }, py::arg("grid"))
        .def_readonly("reference_eigenvalues", &BenchmarkSystem::reference_eigenvalues);
    m.def("make_system", &make_system, py::arg("name"));

    py::class_<Dictionary, std::shared_ptr<Dictionary>>(m, "Dictionary")
        .def_property_readonly("size", &Dictionary::size)
        .def_property_readonly("dim", &Dictionary::dim)
        .def("__call__", [](const Dictionary& d, const Vec& x) { return d(x); })
        .def("gradient", [](const Dictionary& d, const Vec& x) { return d.gradient(x); })
        .def("_description", [](const Dictionary& d) { return d.description().dump(); });
    m.def("_build_dictionary", [](const std::string& spec, const BenchmarkSystem& sys) {
        return std::const_pointer_cast<Dictionary>(build_dictionary(parse(spec), sys));
    });

    py::class_<GeneratorMatrices>(m, "Generators")
        .def_readonly("G", &GeneratorMatrices::G)
        .def_readonly("A", &GeneratorMatrices::A)
        .def_readonly("B", &GeneratorMatrices::B)
        .def_readonly("C", &GeneratorMatrices::C)
        .def_readonly("L", &GeneratorMatrices::L)
        .def_readonly("Lstar", &GeneratorMatrices::Lstar)
        .def_readonly("Q", &GeneratorMatrices::Q)
        .def_readonly("rank", &GeneratorMatrices::rank)
        .def_readonly("m", &GeneratorMatrices::m);
    py::class_<WhitenedRepresentation, std::shared_ptr<WhitenedRepresentation>>(m, "Whitening")
        .def_readonly("T", &WhitenedRepresentation::T)
        .def_readonly("Qt", &WhitenedRepresentation::Qt)
        .def_property_readonly("k", &WhitenedRepresentation::k);

    m.def("estimate", [](const Dictionary& dict, const BenchmarkSystem& sys, const Points& points,
                         std::optional<Vec> weights, double truncation) {
        Vec w = weights ? *weights : Vec::Constant(points.cols(), 1.0 / static_cast<double>(points.cols()));
        py::gil_scoped_release release;
        return estimate_generators(accumulate_gram(dict, sys.field, points, w), truncation);
    }, py::arg("dictionary"), py::arg("system"), py::arg("points"), py::arg("weights") = py::none(),
          py::arg("truncation") = kDefaultTruncation);
    m.def("estimate_from_gram", [](const Mat& G, const Mat& A, double truncation) {
        return estimate_generators(GramMatrices{G, A, Mat(), Mat(), 1, false}, truncation);
    }, py::arg("G"), py::arg("A"), py::arg("truncation") = kDefaultTruncation);
    m.def("whiten", [](const GeneratorMatrices& g) { return std::make_shared<WhitenedRepresentation>(whiten(g)); });
    m.def("reference_oscillator_galerkin", [] {
        ReferenceGalerkin r = reference_oscillator_galerkin();
        return py::make_tuple(r.G, r.A, r.Q);
    });
    m.def("set_threads", &set_thread_count);

    m.def("save_archive", [](const GeneratorMatrices& g, const WhitenedRepresentation& w, const std::string& path,
                             const std::string& meta) { save_matrices(g, w, path, parse(meta)); },
          py::arg("generators"), py::arg("whitening"), py::arg("path"), py::arg("meta") = "{}");
    m.def("load_archive", [](const std::string& path) {
        Archive a = load_matrices(path);
        return py::make_tuple(a.gen, std::make_shared<WhitenedRepresentation>(a.white), a.header.dump());
    });

    m.def("eig_skew", [](const Mat& Qt) { return spectrum_dict(eig_skew(Qt)); });
    m.def("eig_general", [](const Mat& M) { return spectrum_dict(eig_general(M)); });
    m.def("kvn_spectrum", [](const GeneratorMatrices& g, const WhitenedRepresentation& w, double threshold) {
        SpectrumResult all = kvn_direct_spectrum(g, w);
        return py::make_tuple(spectrum_dict(all), spectrum_dict(filter_spectrum(all, threshold)));
    }, py::arg("generators"), py::arg("whitening"), py::arg("threshold") = kDefaultResidualThreshold);

    m.def("propagator", [](const Mat& Qt, double t) { return Propagator(Qt).matrix(t); });
    m.def("evolve", [](const Mat& Qt, const CVec& c, double t) { return Propagator(Qt).apply(c, t); });
    m.def("fit", [](std::shared_ptr<Dictionary> dict, std::shared_ptr<WhitenedRepresentation> white,
                    const std::function<std::complex<double>(Vec)>& target, const Points& points) {
        FitResult f = fit_wavefunction(dict, white, [&](VecIn x) { return target(Vec(x)); }, points);
        return py::make_tuple(f.psi.coeffs, f.relative_residual, f.rank);
    });
    m.def("wavefunction_values", [](std::shared_ptr<Dictionary> dict, std::shared_ptr<WhitenedRepresentation> white,
                                    const CVec& c, const Points& points) {
        return Wavefunction{c, white, dict, 0.0}.values(points);
    });

    m.def("detect_structure", [](const Mat& Qt, double tol) {
        BlockStructure b = detect_structure(Qt, tol);
        py::dict d;
        d["a"] = b.a;
        d["z"] = b.z;
        d["permutation"] = b.permutation;
        d["signs"] = b.signs;
        return d;
    });
    m.def("arrow_circuit", [](const std::array<double, 3>& z, double t) { return gates_to_tuples(arrow_circuit(z, t)); });
    m.def("arrow_exponential", [](const std::array<double, 3>& z, double t) { return Mat(arrow_exponential(z, t)); });
    m.def("simulate", [](int qubits, const std::vector<py::tuple>& gates) {
        return simulate(gates_from_tuples(qubits, gates));
    }, py::arg("qubits"), py::arg("gates"));

    m.def("run_cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "kvn");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return cli::run(static_cast<int>(argv.size()), argv.data());
    });
}
