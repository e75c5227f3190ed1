#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "specflow/common.hpp"
#include "specflow/nmf.hpp"
#include "specflow/regress.hpp"
#include "specflow/spectra.hpp"
#include "specflow/uq.hpp"

namespace specflow {

// Orchestration behind the CLI subcommands: one config object, run
// functions that read/write a run directory, a manifest with per-stage
// wall-clock and per-artifact content hashes.

struct NmfStageConfig {
    int rank = 15;
    std::vector<int> rank_candidates;  // non-empty switches on CV rank selection
    int max_iter = 300;
    double tol = 1e-5;
};

struct FlowStageConfig {
    int n_layers = 5;
    int hidden_width = 32;
    int epochs = 500;
    double lr = 1e-3;
    int batch_size = 64;
};

struct RegressStageConfig {
    InputMode input_mode = InputMode::latent;
    int hidden_width = 16;
    int epochs = 2000;
    double lr = 1e-3;
    int batch_size = 32;
};

struct UqStageConfig {
    int B = 100;
    double level = 0.95;
};

struct SplitStageConfig {
    double holdout_fraction = 140.0 / 426.0;
};

struct PipelineConfig {
    std::string spectra;       // input CSV for fit
    std::string compositions;  // input CSV for fit
    SynthConfig synth;
    SplitStageConfig split;
    NmfStageConfig nmf;
    FlowStageConfig flow;
    RegressStageConfig regress;
    UqStageConfig uq;
    std::uint64_t seed = 0;

    void validate() const;
};

// Strict JSON: unknown keys are rejected, missing keys take the defaults
// above.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_json(const PipelineConfig& cfg);

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct FitOutputs {
    std::filesystem::path out_dir;
    int selected_rank = 0;
    std::vector<StageTiming> timings;
    std::map<std::string, std::string> artifact_hashes;  // filename -> fnv1a64 hex
    std::filesystem::path manifest_path;
};

// split -> (optional rank selection) -> nmf -> flow -> regress -> uq, all
// serialized into out_dir along with manifest.json. Refuses a non-empty
// out_dir unless force is set, in which case the directory is cleared.
FitOutputs run_fit(const PipelineConfig& cfg, const std::filesystem::path& out_dir, bool force);

// Writes spectra.csv, compositions.csv, synth_meta.json.
std::vector<std::filesystem::path> run_synth(const PipelineConfig& cfg,
                                             const std::filesystem::path& out_dir, bool force);

struct SampleOutputs {
    std::filesystem::path csv_path;
    Index clamped = 0;  // latent entries clamped up to zero before inversion
    Index total = 0;
    double clamp_rate = 0.0;
};

SampleOutputs run_sample(const std::filesystem::path& model_dir, int n, std::uint64_t seed,
                         const std::filesystem::path& out_dir, bool force);

struct PredictOutputs {
    std::filesystem::path intervals_path;
    std::optional<std::filesystem::path> coverage_path;
    std::optional<CoverageReport> report;
    std::vector<double> point_r2;  // per oxide, only with truths; NaN when undefined
};

PredictOutputs run_predict(const std::filesystem::path& model_dir,
                           const std::filesystem::path& spectra_path,
                           const std::optional<std::filesystem::path>& truths_path, double level,
                           const std::filesystem::path& out_dir, bool force);

std::filesystem::path run_logprob(const std::filesystem::path& model_dir,
                                  const std::filesystem::path& spectra_path,
                                  const std::filesystem::path& out_dir, bool force);

}  // namespace specflow
