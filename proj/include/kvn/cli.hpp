#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kvn/config.hpp"

namespace kvn::cli {

enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kStructureNotFound = 3,
    kNumericalFailure = 4,
};

// Maps the current exception to an exit code and prints its message.
int exit_code_for_current_exception(std::ostream& err);

struct EstimateResult {
    std::string archive;
    json summary;
};

// Writes the archive (default <outputs>/matrices.kvn) and <outputs>/summary.json.
EstimateResult cmd_estimate(const ExperimentConfig& cfg, const std::optional<std::string>& archive = std::nullopt);

struct SpectrumOutputs {
    SpectrumResult spectrum;
    SpectrumResult filtered;
};
SpectrumOutputs cmd_spectrum(const ExperimentConfig& cfg, const std::string& archive);

struct ConvergeRow {
    std::size_t m = 0;
    std::uint64_t seed = 0;
    double matrix_error = 0.0;
    double eig_error_1 = 0.0;
    double eig_error_2 = 0.0;
};

struct ConvergeResult {
    std::vector<ConvergeRow> rows;
    // Least-squares slopes of log10(mean error) against log10(m); empty with
    // fewer than two m values.
    std::optional<double> slope_matrix, slope_eig_1, slope_eig_2;
};
ConvergeResult run_convergence(const ExperimentConfig& cfg);
ConvergeResult cmd_converge(const ExperimentConfig& cfg);

struct PropagateResult {
    std::vector<std::string> files;
    double fit_residual = 0.0;
};
PropagateResult cmd_propagate(const ExperimentConfig& cfg, const std::string& archive);

struct CircuitResult {
    double max_error = 0.0;
    json report;
};
CircuitResult cmd_circuit(const ExperimentConfig& cfg, const std::string& archive);

// Property checks on an archive; "pass" is true when every check holds.
json cmd_verify(const std::string& archive);

// Entry point used by the kvn executable.
int run(int argc, char** argv);

}  // namespace kvn::cli
