#include "specflow/nmf.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <random>

namespace specflow {

namespace {

constexpr double kDenomEps = 1e-12;  // guards 0/0 in update ratios

// NNLS by multiplicative updates with the components fixed: X <- X .* (Y V^T)
// ./ (X V V^T). Objective tracked through the Gram matrix, so each iteration
// costs O(N L^2) after the one-time O(N M L) setup.
Matrix solve_coefficients(const Matrix& y, const Matrix& components) {
    const Index n = y.rows();
    const Index rank = components.rows();
    const Matrix gram = components * components.transpose();       // L x L
    const Matrix cross = y * components.transpose();               // N x L
    const double ynorm2 = y.squaredNorm();

    Matrix x = Matrix::Ones(n, rank);
    double prev = std::numeric_limits<double>::infinity();
    const int max_iter = 20000;
    for (int it = 0; it < max_iter; ++it) {
        Matrix xg = x * gram;
        x.array() *= cross.array() / (xg.array() + kDenomEps);
        assert(x.minCoeff() >= 0.0);
        double obj = ynorm2 - 2.0 * x.cwiseProduct(cross).sum() +
                     x.cwiseProduct(x * gram).sum();
        obj = std::max(obj, 0.0);
        if (prev - obj < 1e-13 * std::max(prev, 1.0)) break;
        prev = obj;
    }
    return x;
}

double relative_error(const Matrix& y, const Matrix& x, const Matrix& v, double ynorm) {
    return (y - x * v).norm() / ynorm;
}

}  // namespace

NmfModel nmf_fit(const SpectraMatrix& spectra, int rank, const NmfOptions& opts) {
    spectra.validate();
    const Matrix& y = spectra.values;
    const Index n = y.rows();
    const Index m = y.cols();
    if (rank < 1 || rank > std::min(n, m))
        throw RankOutOfBounds("rank " + std::to_string(rank) + " outside [1, " +
                              std::to_string(std::min(n, m)) + "]");
    if (opts.max_iter < 1) throw InvalidConfig("max_iter must be >= 1");
    if (!(opts.tol > 0.0)) throw InvalidConfig("tol must be > 0");
    const double ynorm = y.norm();
    if (ynorm == 0.0) throw AllZeroInput("input matrix is all zeros");

    // Uniform(0,1) scaled so the initial product sits at the data's magnitude.
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double scale = std::sqrt(y.mean() / rank);
    Matrix x(n, rank), v(rank, m);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < rank; ++k) x(i, k) = scale * unif(rng);
    for (Index k = 0; k < rank; ++k)
        for (Index j = 0; j < m; ++j) v(k, j) = scale * unif(rng);

    NmfModel model;
    model.rank = rank;
    model.seed = opts.seed;
    model.channel_grid = spectra.channel_grid;

    double obj = relative_error(y, x, v, ynorm);
    model.objective_trace.push_back(obj);
    int iter = 0;
    while (iter < opts.max_iter) {
        // X update, then V update; both leave the objective non-increasing.
        Matrix numer_x = y * v.transpose();             // N x L
        Matrix denom_x = x * (v * v.transpose());        // N x L
        x.array() *= numer_x.array() / (denom_x.array() + kDenomEps);

        Matrix numer_v = x.transpose() * y;              // L x M
        Matrix denom_v = (x.transpose() * x) * v;        // L x M
        v.array() *= numer_v.array() / (denom_v.array() + kDenomEps);

        assert(x.minCoeff() >= 0.0 && v.minCoeff() >= 0.0);
        ++iter;

        double next = relative_error(y, x, v, ynorm);
        model.objective_trace.push_back(next);
        double decrease = (obj - next) / std::max(obj, kDenomEps);
        obj = next;
        if (decrease >= 0.0 && decrease < opts.tol) break;
    }

    model.basis = std::move(x);
    model.components = std::move(v);
    model.fit_error = obj;
    model.n_iter = iter;
    return model;
}

Matrix NmfModel::transform(const SpectraMatrix& spectra) const {
    spectra.validate();
    return transform(spectra.values);
}

Matrix NmfModel::transform(const Matrix& rows) const {
    if (rows.cols() != components.cols())
        throw ChannelMismatch("input has " + std::to_string(rows.cols()) +
                              " channels, model expects " + std::to_string(components.cols()));
    if (rows.size() > 0 && rows.minCoeff() < 0.0)
        throw NegativeIntensity("transform input has negative entries");
    return solve_coefficients(rows, components);
}

SpectraMatrix NmfModel::inverse_transform(const Matrix& latent) const {
    if (latent.cols() != rank)
        throw RankMismatch("latent has " + std::to_string(latent.cols()) +
                           " columns, model rank is " + std::to_string(rank));
    if (latent.size() > 0 && latent.minCoeff() < 0.0)
        throw NegativeLatent("latent entries must be non-negative");

    SpectraMatrix out;
    out.values = latent * components;
    out.channel_grid = channel_grid;
    out.sample_ids.reserve(static_cast<std::size_t>(latent.rows()));
    for (Index i = 0; i < latent.rows(); ++i)
        out.sample_ids.push_back("gen" + std::to_string(i));
    return out;
}

RankSelection select_rank(const SpectraMatrix& spectra, const std::vector<int>& candidates,
                          int k_folds, std::uint64_t seed, const NmfOptions& opts) {
    spectra.validate();
    if (k_folds < 2) throw InvalidConfig("k_folds must be >= 2");
    if (candidates.empty()) throw RankOutOfBounds("candidate rank list is empty");
    const Index n = spectra.n_samples();
    if (n < k_folds) throw InvalidConfig("fewer samples than folds");

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    // Fold f takes every k-th index; sizes differ by at most one.
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k_folds));
    for (std::size_t i = 0; i < order.size(); ++i)
        folds[i % static_cast<std::size_t>(k_folds)].push_back(order[i]);

    const Index min_train = n - static_cast<Index>(
        std::max_element(folds.begin(), folds.end(),
                         [](const auto& a, const auto& b) { return a.size() < b.size(); })->size());
    for (int r : candidates) {
        if (r < 1 || r > std::min(min_train, spectra.n_channels()))
            throw RankOutOfBounds("candidate rank " + std::to_string(r) +
                                  " out of bounds for fold sizes");
    }

    RankSelection sel;
    sel.candidate_ranks = candidates;
    sel.cv_errors.resize(candidates.size(), 0.0);
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        double total = 0.0;
        for (int f = 0; f < k_folds; ++f) {
            const auto& test_idx = folds[static_cast<std::size_t>(f)];
            SpectraMatrix train;
            train.channel_grid = spectra.channel_grid;
            train.values.resize(n - static_cast<Index>(test_idx.size()), spectra.n_channels());
            Matrix test(static_cast<Index>(test_idx.size()), spectra.n_channels());
            Index tr = 0;
            std::vector<bool> in_test(static_cast<std::size_t>(n), false);
            for (Index idx : test_idx) in_test[static_cast<std::size_t>(idx)] = true;
            for (Index i = 0; i < n; ++i) {
                if (in_test[static_cast<std::size_t>(i)]) continue;
                train.values.row(tr) = spectra.values.row(i);
                train.sample_ids.push_back(spectra.sample_ids[static_cast<std::size_t>(i)]);
                ++tr;
            }
            for (std::size_t k = 0; k < test_idx.size(); ++k)
                test.row(static_cast<Index>(k)) = spectra.values.row(test_idx[k]);

            NmfOptions fold_opts = opts;
            fold_opts.seed = seed + 9973ull * static_cast<std::uint64_t>(candidates[ci]) +
                             static_cast<std::uint64_t>(f);
            NmfModel model = nmf_fit(train, candidates[ci], fold_opts);
            Matrix coeff = model.transform(test);
            double tnorm = test.norm();
            total += tnorm == 0.0 ? 0.0 : (test - coeff * model.components).norm() / tnorm;
        }
        sel.cv_errors[ci] = total / k_folds;
    }

    // argmin, ties toward the smaller rank
    double best_err = std::numeric_limits<double>::infinity();
    int best_rank = candidates.front();
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        bool better = sel.cv_errors[ci] < best_err ||
                      (sel.cv_errors[ci] == best_err && candidates[ci] < best_rank);
        if (better) {
            best_err = sel.cv_errors[ci];
            best_rank = candidates[ci];
        }
    }
    sel.chosen_rank = best_rank;
    return sel;
}

}  // namespace specflow
