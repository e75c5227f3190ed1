#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "specflow/common.hpp"
#include "specflow/spectra.hpp"

namespace specflow {

// Per-oxide regressors: a single ReLU hidden layer with a linear scalar
// output, trained by minibatch SGD on squared error. A suite holds one model
// per oxide plus the shared feature standardization.

enum class InputMode { latent, spectrum };

std::string to_string(InputMode mode);
InputMode input_mode_from_string(const std::string& name);  // throws InvalidConfig

struct RegressConfig {
    int hidden_width = 16;
    int epochs = 2000;
    double lr = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

struct CompositionModel {
    std::string oxide_name;
    Matrix w1;  // hidden x in
    Vector b1;
    Vector w2;  // hidden
    double b2 = 0.0;
    // Targets are standardized internally; predictions are mapped back.
    double target_mean = 0.0;
    double target_scale = 1.0;
    double train_r2 = 0.0;
    bool degenerate_target = false;  // training targets had zero variance

    double predict_standardized_features(const Vector& u) const;
};

struct RegressionSuite {
    InputMode input_mode = InputMode::latent;
    int hidden_width = 0;
    std::uint64_t seed = 0;
    Vector feature_mean;
    Vector feature_scale;
    std::vector<CompositionModel> models;

    // features: one row per sample. Returns rows x models predictions in wt.%.
    Matrix predict(const Matrix& features) const;
};

// Trains one model per oxide column. Model i draws its init and batch order
// from seed cfg.seed + i, so models can be trained in any order (or in
// parallel) with identical results. Feature standardization is fitted here,
// on these features only.
RegressionSuite train_suite(const Matrix& features, const CompositionMatrix& compositions,
                            const RegressConfig& cfg, InputMode mode = InputMode::latent);

// 1 - RSS/TSS with TSS about mean(y_true). Throws DegenerateVariance when
// y_true has zero variance.
double r2_score(const Vector& y_true, const Vector& y_pred);

}  // namespace specflow
