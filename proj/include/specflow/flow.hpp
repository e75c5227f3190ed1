#ifndef SPECFLOW_FLOW_HPP
#define SPECFLOW_FLOW_HPP

#include "specflow/common.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace specflow {

// Single-hidden-layer network with tanh hidden units and linear output.
struct CouplingNet {
    Matrix w1;  // hidden x in
    Vector b1;
    Matrix w2;  // out x hidden
    Vector b2;
};

// Affine coupling: the pass coordinates are copied, the act coordinates are
// scaled by exp(alpha) and shifted, with alpha and the shift computed from
// the pass coordinates. alpha is smoothly clamped to (-s, s) so exp stays
// bounded; the per-layer log-det is the sum of the clamped alpha outputs.
struct CouplingLayer {
    std::vector<int> pass_idx;
    std::vector<int> act_idx;
    CouplingNet scale_net;
    CouplingNet shift_net;
};

struct FlowModel {
    int dim = 0;
    int hidden_width = 0;
    double scale_clamp = 5.0;
    std::uint64_t seed = 0;
    std::vector<CouplingLayer> layers;
    // Per-coordinate affine standardization applied before the coupling
    // stack; identity until train_flow fits it. Its log-det enters log_prob.
    Vector standardize_mean;
    Vector standardize_scale;

    // z -> x through the coupling stack (standardization excluded) and the
    // accumulated log-det of the forward map.
    std::pair<Vector, double> forward(const Vector& z) const;
    // Exact algebraic inverse; log-det is the negative of the forward one.
    std::pair<Vector, double> inverse(const Vector& x) const;

    // Log-density of x under the flow with a standard-normal base, the
    // standardization folded in. For an all-zero-parameter flow this is the
    // standard-normal log-density of x.
    double log_prob(const Vector& x) const;
    Vector log_prob_rows(const Matrix& rows) const;

    // n x dim draws: base-normal samples pushed through forward and
    // de-standardized. Deterministic given the seed.
    Matrix sample(int n, std::uint64_t seed) const;

    Index n_params() const;
    Vector params() const;
    void set_params(const Vector& theta);
};

// Alternating parity masks: even coordinates pass on even-indexed layers,
// odd coordinates on odd-indexed ones, so every coordinate is transformed
// at least once when n_layers >= 2. Weights ~ N(0, 0.01^2), biases zero.
FlowModel new_flow(int dim, int n_layers, int hidden_width, std::uint64_t seed);

// Mean negative log-likelihood of the batch (rows = samples) and its exact
// gradient with respect to params(), same indexing.
std::pair<double, Vector> nll_grad(const FlowModel& model, const Matrix& batch);

// Gradient of the mean NLL with respect to the batch entries (for numeric
// cross-checks).
Matrix nll_input_grad(const FlowModel& model, const Matrix& batch);

struct FlowTrainConfig {
    int epochs = 500;
    double lr = 1e-3;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> epoch_nll;  // mean train NLL per epoch
    int epochs = 0;
    double lr = 0.0;
    int batch_size = 0;
    std::uint64_t seed = 0;
};

// Mini-batch SGD on the mean NLL with seeded shuffling. Fits the input
// standardization on the training rows and stores it in the returned model.
std::pair<FlowModel, TrainReport> train_flow(const FlowModel& model, const Matrix& latent_rows,
                                             const FlowTrainConfig& cfg);

}  // namespace specflow

#endif
