#include "specflow/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace specflow {

namespace {

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw NonFiniteInput(std::string(what) + " contains a non-finite value");
}

Vector column_sd(const Matrix& m, const Vector& mean) {
    const double denom = std::max<double>(1.0, static_cast<double>(m.rows() - 1));
    Vector sd(m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
        double var = (m.col(j).array() - mean(j)).square().sum() / denom;
        double s = std::sqrt(var);
        sd(j) = s > 1e-12 ? s : 1.0;
    }
    return sd;
}

// Trains one scalar-output net on standardized features (in x n block) and
// standardized targets. rng drives both init and the per-epoch batch order.
void train_model(CompositionModel& model, const Matrix& ublock, const Vector& targets,
                 const RegressConfig& cfg, std::mt19937_64& rng) {
    const Index in_dim = ublock.rows();
    const Index n = ublock.cols();
    const Index h = cfg.hidden_width;

    std::normal_distribution<double> normal(0.0, 1.0);
    const double s1 = std::sqrt(2.0 / static_cast<double>(in_dim));
    const double s2 = std::sqrt(1.0 / static_cast<double>(h));
    model.w1 = Matrix(h, in_dim);
    for (Index i = 0; i < model.w1.size(); ++i) model.w1.data()[i] = s1 * normal(rng);
    model.b1 = Vector::Zero(h);
    model.w2 = Vector(h);
    for (Index i = 0; i < h; ++i) model.w2(i) = s2 * normal(rng);
    model.b2 = 0.0;

    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (Index start = 0; start < n; start += cfg.batch_size) {
            const Index b = std::min<Index>(cfg.batch_size, n - start);
            Matrix batch(in_dim, b);
            Vector y(b);
            for (Index k = 0; k < b; ++k) {
                batch.col(k) = ublock.col(perm[static_cast<std::size_t>(start + k)]);
                y(k) = targets(perm[static_cast<std::size_t>(start + k)]);
            }

            Matrix pre = (model.w1 * batch).colwise() + model.b1;
            Matrix hidden = pre.cwiseMax(0.0);
            Vector out = (hidden.transpose() * model.w2).array() + model.b2;
            Vector err = (out - y) / static_cast<double>(b);

            Vector g_w2 = hidden * err;
            double g_b2 = err.sum();
            Matrix g_hidden = model.w2 * err.transpose();
            Matrix g_pre = (pre.array() > 0.0).select(g_hidden, 0.0);
            Matrix g_w1 = g_pre * batch.transpose();
            Vector g_b1 = g_pre.rowwise().sum();

            model.w1 -= cfg.lr * g_w1;
            model.b1 -= cfg.lr * g_b1;
            model.w2 -= cfg.lr * g_w2;
            model.b2 -= cfg.lr * g_b2;
        }
    }
}

Vector predict_block(const CompositionModel& model, const Matrix& ublock) {
    Matrix hidden = ((model.w1 * ublock).colwise() + model.b1).cwiseMax(0.0);
    Vector out = (hidden.transpose() * model.w2).array() + model.b2;
    return (out.array() * model.target_scale + model.target_mean).matrix();
}

}  // namespace

std::string to_string(InputMode mode) {
    return mode == InputMode::latent ? "latent" : "spectrum";
}

InputMode input_mode_from_string(const std::string& name) {
    if (name == "latent") return InputMode::latent;
    if (name == "spectrum") return InputMode::spectrum;
    throw InvalidConfig("unknown input_mode '" + name + "'");
}

double CompositionModel::predict_standardized_features(const Vector& u) const {
    Vector hidden = (w1 * u + b1).cwiseMax(0.0);
    return (w2.dot(hidden) + b2) * target_scale + target_mean;
}

Matrix RegressionSuite::predict(const Matrix& features) const {
    if (features.cols() != feature_mean.size())
        throw DimMismatch("feature dimension " + std::to_string(features.cols()) +
                          " does not match suite input dimension " +
                          std::to_string(feature_mean.size()));
    check_finite(features, "prediction input");
    Matrix ublock = features.transpose();
    ublock.colwise() -= feature_mean;
    ublock.array().colwise() /= feature_scale.array();
    Matrix out(features.rows(), static_cast<Index>(models.size()));
    for (std::size_t i = 0; i < models.size(); ++i)
        out.col(static_cast<Index>(i)) = predict_block(models[i], ublock);
    return out;
}

RegressionSuite train_suite(const Matrix& features, const CompositionMatrix& compositions,
                            const RegressConfig& cfg, InputMode mode) {
    if (features.rows() != compositions.values.rows())
        throw SizeMismatch("feature rows " + std::to_string(features.rows()) +
                           " vs composition rows " + std::to_string(compositions.values.rows()));
    if (features.rows() < 1) throw EmptyDataset("no training samples");
    if (cfg.hidden_width < 1 || cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0))
        throw InvalidConfig("bad regression configuration");
    check_finite(features, "training features");

    RegressionSuite suite;
    suite.input_mode = mode;
    suite.hidden_width = cfg.hidden_width;
    suite.seed = cfg.seed;
    suite.feature_mean = features.colwise().mean();
    suite.feature_scale = column_sd(features, suite.feature_mean);

    Matrix ublock = features.transpose();
    ublock.colwise() -= suite.feature_mean;
    ublock.array().colwise() /= suite.feature_scale.array();

    const Index t = compositions.values.cols();
    const Index n = features.rows();
    suite.models.resize(static_cast<std::size_t>(t));
    for (Index i = 0; i < t; ++i) {
        CompositionModel& model = suite.models[static_cast<std::size_t>(i)];
        model.oxide_name = compositions.oxide_names[static_cast<std::size_t>(i)];

        Vector y = compositions.values.col(i);
        model.target_mean = y.mean();
        double var = (y.array() - model.target_mean).square().sum() /
                     std::max<double>(1.0, static_cast<double>(n - 1));
        double sd = std::sqrt(var);
        model.target_scale = sd > 1e-12 ? sd : 1.0;
        Vector ys = (y.array() - model.target_mean) / model.target_scale;

        std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(i));
        train_model(model, ublock, ys, cfg, rng);

        Vector fitted = predict_block(model, ublock);
        try {
            model.train_r2 = r2_score(y, fitted);
            model.degenerate_target = false;
        } catch (const DegenerateVariance&) {
            model.train_r2 = std::numeric_limits<double>::quiet_NaN();
            model.degenerate_target = true;
        }
    }
    return suite;
}

double r2_score(const Vector& y_true, const Vector& y_pred) {
    if (y_true.size() != y_pred.size())
        throw SizeMismatch("r2_score inputs have different lengths");
    if (y_true.size() < 2) throw SizeMismatch("r2_score needs at least 2 points");
    const double mean = y_true.mean();
    const double tss = (y_true.array() - mean).square().sum();
    if (tss == 0.0) throw DegenerateVariance("y_true has zero variance");
    const double rss = (y_true - y_pred).squaredNorm();
    return 1.0 - rss / tss;
}

}  // namespace specflow
