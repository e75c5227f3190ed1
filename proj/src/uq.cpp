#include "specflow/uq.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace specflow {

namespace {

// Linear-interpolation quantile of a sorted sample (the common "type 7"
// definition: h = p(m-1), interpolate between the bracketing order
// statistics).
double quantile_sorted(const std::vector<double>& v, double p) {
    const std::size_t m = v.size();
    if (m == 1) return v[0];
    double h = p * static_cast<double>(m - 1);
    auto lo = static_cast<std::size_t>(h);
    if (lo >= m - 1) return v[m - 1];
    double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace

BootstrapEnsemble bootstrap_fit(const Matrix& features, const CompositionMatrix& compositions,
                                int B, const RegressConfig& cfg, std::uint64_t seed,
                                InputMode mode) {
    if (B < 2) throw BTooSmall("bootstrap needs B >= 2, got " + std::to_string(B));
    if (features.rows() != compositions.values.rows())
        throw SizeMismatch("feature rows " + std::to_string(features.rows()) +
                           " vs composition rows " + std::to_string(compositions.values.rows()));

    const Index n = features.rows();
    const Index t = compositions.values.cols();

    BootstrapEnsemble ensemble;
    ensemble.B = B;
    ensemble.base_seed = seed;
    ensemble.oxide_names = compositions.oxide_names;
    ensemble.replicates.reserve(static_cast<std::size_t>(B));

    Matrix oob_sum = Matrix::Zero(n, t);
    Eigen::VectorXi oob_count = Eigen::VectorXi::Zero(n);
    Matrix pred0;

    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::vector<char> included(static_cast<std::size_t>(n));
    for (int rep = 0; rep < B; ++rep) {
        const std::uint64_t rep_seed = seed + static_cast<std::uint64_t>(rep);
        std::mt19937_64 rng(rep_seed);
        std::uniform_int_distribution<Index> pick(0, n - 1);
        std::fill(included.begin(), included.end(), 0);
        for (Index k = 0; k < n; ++k) {
            idx[static_cast<std::size_t>(k)] = pick(rng);
            included[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = 1;
        }

        Matrix rf(n, features.cols());
        CompositionMatrix rc;
        rc.oxide_names = compositions.oxide_names;
        rc.values = Matrix(n, t);
        rc.sample_ids.resize(static_cast<std::size_t>(n));
        for (Index k = 0; k < n; ++k) {
            const Index src = idx[static_cast<std::size_t>(k)];
            rf.row(k) = features.row(src);
            rc.values.row(k) = compositions.values.row(src);
            rc.sample_ids[static_cast<std::size_t>(k)] =
                compositions.sample_ids[static_cast<std::size_t>(src)];
        }

        RegressConfig rep_cfg = cfg;
        rep_cfg.seed = rep_seed;
        RegressionSuite suite = train_suite(rf, rc, rep_cfg, mode);
        Matrix pred = suite.predict(features);
        if (rep == 0) pred0 = pred;
        for (Index i = 0; i < n; ++i) {
            if (!included[static_cast<std::size_t>(i)]) {
                oob_sum.row(i) += pred.row(i);
                oob_count(i) += 1;
            }
        }
        ensemble.replicates.push_back(std::move(suite));
    }

    ensemble.residual_store = Matrix(n, t);
    for (Index i = 0; i < n; ++i) {
        if (oob_count(i) > 0) {
            ensemble.residual_store.row(i) =
                compositions.values.row(i) - oob_sum.row(i) / static_cast<double>(oob_count(i));
        } else {
            ensemble.residual_store.row(i) = compositions.values.row(i) - pred0.row(i);
        }
    }
    return ensemble;
}

std::vector<std::vector<PredictionInterval>> predict_intervals(const BootstrapEnsemble& ensemble,
                                                               const Matrix& features,
                                                               double level) {
    if (ensemble.replicates.empty()) throw BTooSmall("ensemble has no replicates");
    if (!(level > 0.0 && level < 1.0))
        throw InvalidConfig("confidence level must lie in (0, 1)");

    const Index n = features.rows();
    const auto b = static_cast<Index>(ensemble.replicates.size());
    const Index t = static_cast<Index>(ensemble.oxide_names.size());
    const Index r = ensemble.residual_store.rows();

    std::vector<Matrix> preds;
    preds.reserve(static_cast<std::size_t>(b));
    for (const auto& suite : ensemble.replicates) preds.push_back(suite.predict(features));

    const double p_lo = (1.0 - level) / 2.0;
    const double p_hi = (1.0 + level) / 2.0;

    std::vector<std::vector<PredictionInterval>> out(static_cast<std::size_t>(n));
    std::vector<double> reps(static_cast<std::size_t>(b));
    std::vector<double> pool(static_cast<std::size_t>(b * r));
    for (Index s = 0; s < n; ++s) {
        auto& row = out[static_cast<std::size_t>(s)];
        row.resize(static_cast<std::size_t>(t));
        for (Index j = 0; j < t; ++j) {
            for (Index k = 0; k < b; ++k)
                reps[static_cast<std::size_t>(k)] = preds[static_cast<std::size_t>(k)](s, j);
            std::size_t pos = 0;
            for (Index k = 0; k < b; ++k)
                for (Index i = 0; i < r; ++i)
                    pool[pos++] = reps[static_cast<std::size_t>(k)] + ensemble.residual_store(i, j);

            std::sort(reps.begin(), reps.end());
            std::sort(pool.begin(), pool.end());
            PredictionInterval& pi = row[static_cast<std::size_t>(j)];
            pi.oxide = ensemble.oxide_names[static_cast<std::size_t>(j)];
            pi.level = level;
            pi.point = quantile_sorted(reps, 0.5);
            pi.lower = std::min(quantile_sorted(pool, p_lo), pi.point);
            pi.upper = std::max(quantile_sorted(pool, p_hi), pi.point);
        }
    }
    return out;
}

std::vector<PredictionInterval> predict_interval(const BootstrapEnsemble& ensemble,
                                                 const Vector& y0, double level) {
    Matrix one = y0.transpose();
    return predict_intervals(ensemble, one, level).front();
}

std::vector<double> coverage(const std::vector<std::vector<PredictionInterval>>& intervals,
                             const CompositionMatrix& truths) {
    const auto n = static_cast<Index>(intervals.size());
    if (n != truths.values.rows())
        throw SizeMismatch("interval rows " + std::to_string(n) + " vs truth rows " +
                           std::to_string(truths.values.rows()));
    if (n == 0) throw EmptyDataset("no intervals to score");
    const Index t = truths.values.cols();

    std::vector<Index> hits(static_cast<std::size_t>(t), 0);
    for (Index s = 0; s < n; ++s) {
        const auto& row = intervals[static_cast<std::size_t>(s)];
        if (static_cast<Index>(row.size()) != t)
            throw SizeMismatch("interval row has wrong oxide count");
        for (Index j = 0; j < t; ++j) {
            const double v = truths.values(s, j);
            const auto& pi = row[static_cast<std::size_t>(j)];
            if (v >= pi.lower && v <= pi.upper) hits[static_cast<std::size_t>(j)] += 1;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(t));
    for (Index j = 0; j < t; ++j)
        out[static_cast<std::size_t>(j)] =
            100.0 * static_cast<double>(hits[static_cast<std::size_t>(j)]) /
            static_cast<double>(n);
    return out;
}

}  // namespace specflow
