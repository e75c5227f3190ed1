#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specflow/common.hpp"
#include "specflow/regress.hpp"
#include "specflow/spectra.hpp"

namespace specflow {

// Bootstrap uncertainty for the per-oxide regressors: B suites trained on
// seeded resamples, out-of-bag residuals kept per training row, and
// percentile prediction intervals built from replicate-prediction plus
// residual draws.

struct PredictionInterval {
    std::string oxide;
    double level = 0.0;
    double lower = 0.0;
    double point = 0.0;
    double upper = 0.0;
};

struct BootstrapEnsemble {
    int B = 0;
    std::uint64_t base_seed = 0;
    std::vector<std::string> oxide_names;
    std::vector<RegressionSuite> replicates;
    // One row per training sample, one column per oxide: residual of the
    // mean prediction over replicates whose resample excluded that row.
    // Rows that every resample picked up fall back to the replicate-0
    // residual.
    Matrix residual_store;
};

// Replicate n resamples N training rows with replacement using seed
// base_seed + n and trains its suite with that same seed.
BootstrapEnsemble bootstrap_fit(const Matrix& features, const CompositionMatrix& compositions,
                                int B, const RegressConfig& cfg, std::uint64_t seed,
                                InputMode mode = InputMode::latent);

// Percentile interval per oxide at confidence level in (0, 1): quantiles of
// the empirical distribution {replicate prediction + stored residual} over
// every replicate/residual pair; point is the median replicate prediction.
std::vector<PredictionInterval> predict_interval(const BootstrapEnsemble& ensemble,
                                                 const Vector& y0, double level);

// Batched variant: one vector of per-oxide intervals per feature row.
std::vector<std::vector<PredictionInterval>> predict_intervals(const BootstrapEnsemble& ensemble,
                                                               const Matrix& features,
                                                               double level);

// Percent of truths inside [lower, upper] (endpoints inclusive), per oxide.
std::vector<double> coverage(const std::vector<std::vector<PredictionInterval>>& intervals,
                             const CompositionMatrix& truths);

struct CoverageReport {
    std::vector<std::string> oxide_names;
    std::vector<double> coverage_percent;
    double level = 0.0;
    Index n_samples = 0;
    int B = 0;
    std::uint64_t seed = 0;
};

}  // namespace specflow
