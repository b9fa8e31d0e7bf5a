#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "kfp/ek.hpp"
#include "kfp/sde.hpp"
#include "kfp/spectral.hpp"

namespace kfp {

inline constexpr const char* kToolVersion = "kfpctl 1.0.0";
inline constexpr int kReportFormat = 1;

/// Exit codes shared by the pipeline and the command-line tool.
enum ExitCode { exit_ok = 0, exit_usage = 1, exit_assumption = 2, exit_numerical = 3 };

struct SdeSettings {
    std::vector<double> h_sweep;  // subset of the experiment sweep; empty disables the stage
    double dt = 0.0;              // 0: min(h, 1)/50
    int n_traj = 200;
    double T_max = 0.0;           // 0: 50 h / lambda_EK
    double max_steps = 4e9;       // total Euler steps per h before the run is skipped
};

struct ExperimentConfig {
    // Model: exactly one of model_file, model_text, or a preset with potential terms.
    std::string model_file;
    std::string model_text;
    std::string preset = "standard";
    int potential_dim = 1;
    std::vector<std::pair<std::vector<int>, double>> potential_terms;
    std::vector<double> sigma;  // row-major d' x d'; empty: identity / sqrt 2

    std::vector<double> h_sweep{0.2, 0.15, 0.1, 0.07};
    double box_lo = -3.0;
    double box_hi = 3.0;
    int landscape_nodes = 0;
    int nu_bar = 2;

    GridOptions grid;
    double stabilization_factor = 1.0;
    int k_eigs = 0;  // 0: number of minima + 4

    SeriesCaps caps;
    QuasimodeOptions quasimode;

    SdeSettings sde;
    std::uint64_t seed = 1;
    int threads = 1;

    std::string out_dir = "out";
    int format_version = kReportFormat;

    static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = "");
    static ExperimentConfig load(const std::string& path);
    nlohmann::json to_json() const;
    /// FNV-1a of the canonical JSON serialization, as 16 hex digits.
    std::string hash() const;
    CoefficientSystem system() const;
    Box landscape_box(int d) const;
    /// Throws std::invalid_argument on inconsistent settings (mismatched h-grids among them).
    void validate() const;
};

struct PipelineResult {
    int exit_code = exit_ok;
    std::vector<std::string> written;  // artifact file names, relative to out_dir
    std::vector<std::string> gaps;     // stages or rows that could not be produced
    nlohmann::json report;
};

/// Stages: label, hypo, wkb, ek, spectrum, sde. An empty set runs everything and writes the summary report.
/// A non-empty set computes the needed upstream results but writes only the requested artifacts.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::set<std::string>& stages = {});

const std::vector<std::string>& stage_names();

struct CompareResult {
    std::string csv;    // per (minimum, h): ratios with NA markers
    std::string table;  // human-readable summary with fitted convergence exponents
};

/// Reads report.csv from a pipeline output directory. Throws std::invalid_argument when the stages were run on different h-grids.
CompareResult compare_reports(const std::string& dir);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& s);

}  // namespace kfp
