#include "doctest.h"

#include "specflow/regress.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

using namespace specflow;

namespace {

Matrix random_features(Index n, Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < d; ++j) m(i, j) = dist(rng);
    return m;
}

CompositionMatrix make_compositions(const Matrix& values) {
    CompositionMatrix c;
    c.values = values;
    for (Index j = 0; j < values.cols(); ++j) c.oxide_names.push_back("Ox" + std::to_string(j));
    for (Index i = 0; i < values.rows(); ++i) c.sample_ids.push_back("s" + std::to_string(i));
    return c;
}

}  // namespace

TEST_CASE("r2_score on hand-worked examples") {
    Vector y(3);
    y << 1.0, 2.0, 3.0;
    CHECK(r2_score(y, y) == 1.0);

    // y = (0, 2): TSS = 2 about the mean 1. pred = (1, 2): RSS = 1. R^2 = 0.5.
    Vector y2(2), p2(2);
    y2 << 0.0, 2.0;
    p2 << 1.0, 2.0;
    CHECK(std::abs(r2_score(y2, p2) - 0.5) < 1e-12);

    // Predicting the mean scores zero; predicting worse goes negative.
    Vector mean_pred = Vector::Constant(2, 1.0);
    CHECK(r2_score(y2, mean_pred) == doctest::Approx(0.0).epsilon(1e-15));
    Vector bad(2);
    bad << 3.0, -1.0;
    CHECK(r2_score(y2, bad) < 0.0);
}

TEST_CASE("r2_score is invariant to a common shift") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> d(0.0, 1.0);
    Vector y(30), p(30);
    for (Index i = 0; i < 30; ++i) {
        y(i) = d(rng);
        p(i) = y(i) + 0.3 * d(rng);
    }
    double base = r2_score(y, p);
    Vector shift = Vector::Constant(30, 17.0);
    CHECK(r2_score(y + shift, p + shift) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("r2_score rejects degenerate input") {
    Vector y(3), p(3);
    y << 1.0, 2.0, 3.0;
    p << 1.0, 2.0, 3.0;
    CHECK_THROWS_AS(r2_score(y, p.head(2)), SizeMismatch);
    CHECK_THROWS_AS(r2_score(y.head(1), p.head(1)), SizeMismatch);
    Vector flat = Vector::Constant(3, 2.0);
    CHECK_THROWS_AS(r2_score(flat, p), DegenerateVariance);
}

TEST_CASE("input mode names round-trip and reject unknowns") {
    CHECK(to_string(InputMode::latent) == "latent");
    CHECK(to_string(InputMode::spectrum) == "spectrum");
    CHECK(input_mode_from_string("latent") == InputMode::latent);
    CHECK(input_mode_from_string("spectrum") == InputMode::spectrum);
    CHECK_THROWS_AS(input_mode_from_string("latents"), InvalidConfig);
}

TEST_CASE("suite fits a noiseless linear target to high accuracy") {
    const Index n = 256, d = 5;
    Matrix x = random_features(n, d, 12);
    Vector w(d);
    w << 1.0, -2.0, 0.5, 3.0, -0.7;
    Matrix targets = (x * w).array() + 4.0;
    CompositionMatrix comps = make_compositions(targets);

    RegressConfig cfg;
    cfg.epochs = 2000;
    cfg.lr = 3e-3;
    cfg.batch_size = 32;
    cfg.hidden_width = 16;
    cfg.seed = 3;
    RegressionSuite suite = train_suite(x, comps, cfg);

    REQUIRE(suite.models.size() == 1);
    CHECK(suite.models[0].oxide_name == "Ox0");
    CHECK_FALSE(suite.models[0].degenerate_target);
    CHECK(suite.models[0].train_r2 > 0.99);

    Matrix pred = suite.predict(x);
    CHECK(pred.rows() == n);
    CHECK(pred.cols() == 1);
    CHECK(r2_score(targets.col(0), pred.col(0)) ==
          doctest::Approx(suite.models[0].train_r2).epsilon(1e-12));
}

TEST_CASE("constant targets are flagged degenerate and predicted as the constant") {
    const Index n = 64;
    Matrix x = random_features(n, 3, 9);
    Matrix targets(n, 2);
    targets.col(0) = (x.col(0).array() * 2.0 + 1.0).matrix();
    targets.col(1).setConstant(7.25);
    CompositionMatrix comps = make_compositions(targets);

    RegressConfig cfg;
    cfg.epochs = 2000;
    cfg.seed = 1;
    RegressionSuite suite = train_suite(x, comps, cfg);

    REQUIRE(suite.models.size() == 2);
    CHECK_FALSE(suite.models[0].degenerate_target);
    CHECK(suite.models[1].degenerate_target);
    CHECK(std::isnan(suite.models[1].train_r2));
    CHECK(suite.models[1].target_mean == 7.25);

    // The net output decays toward zero only along fast descent modes, so the
    // bound on the residual around the constant is loose by design.
    Matrix pred = suite.predict(x);
    for (Index i = 0; i < n; ++i) CHECK(std::abs(pred(i, 1) - 7.25) < 0.4);
}

TEST_CASE("one small step in the descent direction lowers the training loss") {
    // A single tiny-rate epoch must not increase the mean squared error;
    // this pins the sign and scaling of the backward pass.
    const Index n = 40;
    Matrix x = random_features(n, 3, 21);
    Matrix targets = (x.col(0).array().square() + 0.5 * x.col(1).array()).matrix();
    CompositionMatrix comps = make_compositions(targets);

    RegressConfig zero;
    zero.epochs = 0;
    zero.seed = 6;
    RegressionSuite before = train_suite(x, comps, zero);
    double mse0 = (before.predict(x).col(0) - targets.col(0)).squaredNorm();

    RegressConfig one = zero;
    one.epochs = 1;
    one.lr = 1e-5;
    one.batch_size = static_cast<int>(n);
    RegressionSuite after = train_suite(x, comps, one);
    double mse1 = (after.predict(x).col(0) - targets.col(0)).squaredNorm();
    CHECK(mse1 < mse0);
}

TEST_CASE("training is deterministic and models draw independent seeds") {
    const Index n = 80;
    Matrix x = random_features(n, 4, 33);
    Matrix targets(n, 2);
    targets.col(0) = x.col(0) + x.col(1);
    targets.col(1) = x.col(0) + x.col(1);  // identical columns
    CompositionMatrix comps = make_compositions(targets);

    RegressConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 40;
    RegressionSuite a = train_suite(x, comps, cfg);
    RegressionSuite b = train_suite(x, comps, cfg);
    CHECK((a.predict(x) - b.predict(x)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.models[0].w1 - b.models[0].w1).cwiseAbs().maxCoeff() == 0.0);

    // Identical targets, different per-model streams: the fitted weights differ.
    CHECK((a.models[0].w1 - a.models[1].w1).cwiseAbs().maxCoeff() > 0.0);

    RegressConfig other = cfg;
    other.seed = 41;
    RegressionSuite c = train_suite(x, comps, other);
    CHECK((a.predict(x) - c.predict(x)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("suite predict validates feature dimensions and finiteness") {
    Matrix x = random_features(30, 3, 2);
    Matrix targets = x.col(0);
    RegressConfig cfg;
    cfg.epochs = 10;
    RegressionSuite suite = train_suite(x, make_compositions(targets), cfg);

    CHECK_THROWS_AS(suite.predict(random_features(5, 4, 3)), DimMismatch);
    Matrix bad = random_features(5, 3, 4);
    bad(2, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(suite.predict(bad), NonFiniteInput);
}

TEST_CASE("train_suite rejects inconsistent or empty input") {
    Matrix x = random_features(20, 3, 5);
    CompositionMatrix comps = make_compositions(random_features(20, 2, 6).cwiseAbs());
    RegressConfig cfg;
    cfg.epochs = 5;

    CompositionMatrix short_comps = comps;
    short_comps.values = comps.values.topRows(10);
    short_comps.sample_ids.resize(10);
    CHECK_THROWS_AS(train_suite(x, short_comps, cfg), SizeMismatch);

    CHECK_THROWS_AS(train_suite(Matrix(0, 3), CompositionMatrix{}, cfg), EmptyDataset);

    RegressConfig bad = cfg;
    bad.epochs = -1;
    CHECK_THROWS_AS(train_suite(x, comps, bad), InvalidConfig);
    bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(train_suite(x, comps, bad), InvalidConfig);
    bad = cfg;
    bad.hidden_width = 0;
    CHECK_THROWS_AS(train_suite(x, comps, bad), InvalidConfig);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_suite(x, comps, bad), InvalidConfig);
}

TEST_CASE("suite records the input mode and feature standardization") {
    Matrix x = random_features(50, 4, 8).array() * 3.0 + 2.0;
    Matrix targets = x.col(1);
    RegressConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 2;
    RegressionSuite suite = train_suite(x, make_compositions(targets), cfg, InputMode::spectrum);

    CHECK(suite.input_mode == InputMode::spectrum);
    CHECK(suite.hidden_width == cfg.hidden_width);
    CHECK(suite.seed == cfg.seed);
    REQUIRE(suite.feature_mean.size() == 4);
    for (Index j = 0; j < 4; ++j) {
        double mean = x.col(j).mean();
        double sd = std::sqrt((x.col(j).array() - mean).square().sum() / (x.rows() - 1));
        CHECK(suite.feature_mean(j) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(suite.feature_scale(j) == doctest::Approx(sd).epsilon(1e-12));
    }
}
