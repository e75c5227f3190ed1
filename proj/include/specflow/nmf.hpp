#ifndef SPECFLOW_NMF_HPP
#define SPECFLOW_NMF_HPP

#include "specflow/common.hpp"
#include "specflow/spectra.hpp"

#include <cstdint>
#include <vector>

namespace specflow {

struct NmfOptions {
    int max_iter = 500;
    double tol = 1e-6;  // stop when the relative objective decrease falls below this
    std::uint64_t seed = 0;
};

// Y ~ basis * components with all factors non-negative; `basis` holds the
// per-sample coefficient block (N_train x L) and `components` the spectral
// factors (L x M). fit_error is ||Y - basis*components||_F / ||Y||_F.
struct NmfModel {
    Matrix basis;
    Matrix components;
    int rank = 0;
    double fit_error = 0.0;
    int n_iter = 0;
    std::uint64_t seed = 0;
    std::vector<double> channel_grid;
    std::vector<double> objective_trace;  // relative error after init and after each iteration

    // Non-negative coefficients for new spectra, components held fixed.
    // Multiplicative updates from an all-ones start; a zero row maps to zero.
    Matrix transform(const SpectraMatrix& spectra) const;
    Matrix transform(const Matrix& rows) const;

    // XV on the stored channel grid. Rejects negative latent entries.
    SpectraMatrix inverse_transform(const Matrix& latent) const;
};

// Frobenius-objective multiplicative updates (Lee-Seung) from a seeded
// uniform-positive initialization. The objective trace is non-increasing
// up to a 1e-12 guard.
NmfModel nmf_fit(const SpectraMatrix& spectra, int rank, const NmfOptions& opts = {});

struct RankSelection {
    std::vector<int> candidate_ranks;
    std::vector<double> cv_errors;  // mean out-of-fold reconstruction error per candidate
    int chosen_rank = 0;
};

// k-fold cross-validation: fit components on the training folds, re-solve
// coefficients on the held-out fold, score by relative reconstruction error.
// Ties break toward the smaller rank.
RankSelection select_rank(const SpectraMatrix& spectra, const std::vector<int>& candidates,
                          int k_folds = 5, std::uint64_t seed = 0, const NmfOptions& opts = {});

}  // namespace specflow

#endif
