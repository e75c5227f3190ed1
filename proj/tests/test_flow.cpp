#include "doctest.h"

#include "specflow/flow.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace specflow;

namespace {

const double kPi = std::acos(-1.0);
const double kLn2Pi = std::log(2.0 * kPi);

// Reference flow with all parameters zero: exact identity map, zero log-det.
FlowModel identity_flow(int dim, int n_layers, int hidden) {
    FlowModel m = new_flow(dim, n_layers, hidden, 0);
    m.set_params(Vector::Zero(m.n_params()));
    return m;
}

// Flow with weights and biases drawn wide enough that every layer transforms
// its inputs noticeably.
FlowModel random_flow(int dim, int n_layers, int hidden, std::uint64_t seed) {
    FlowModel m = new_flow(dim, n_layers, hidden, seed);
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<double> d(0.0, 0.4);
    Vector theta(m.n_params());
    for (Index i = 0; i < theta.size(); ++i) theta(i) = d(rng);
    m.set_params(theta);
    return m;
}

Vector random_vector(Index n, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

Matrix random_rows(Index n, Index dim, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    Matrix m(n, dim);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < dim; ++j) m(i, j) = d(rng);
    return m;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

Matrix numeric_jacobian(const FlowModel& m, const Vector& z, double h) {
    Matrix jac(m.dim, m.dim);
    for (int j = 0; j < m.dim; ++j) {
        Vector zp = z, zm = z;
        zp(j) += h;
        zm(j) -= h;
        jac.col(j) = (m.forward(zp).first - m.forward(zm).first) / (2.0 * h);
    }
    return jac;
}

double nll_at(FlowModel m, const Vector& theta, const Matrix& batch) {
    m.set_params(theta);
    return nll_grad(m, batch).first;
}

}  // namespace

TEST_CASE("alternating masks partition the coordinates and cover all of them") {
    FlowModel even = new_flow(4, 2, 8, 3);
    CHECK(even.layers[0].pass_idx == std::vector<int>{0, 2});
    CHECK(even.layers[0].act_idx == std::vector<int>{1, 3});
    CHECK(even.layers[1].pass_idx == std::vector<int>{1, 3});
    CHECK(even.layers[1].act_idx == std::vector<int>{0, 2});

    FlowModel odd = new_flow(15, 2, 8, 3);
    CHECK(odd.layers[0].pass_idx.size() == 8);  // even coordinates 0,2,...,14
    CHECK(odd.layers[0].act_idx.size() == 7);
    CHECK(odd.layers[1].pass_idx.size() == 7);
    CHECK(odd.layers[1].act_idx.size() == 8);
    std::vector<bool> touched(15, false);
    for (const auto& layer : odd.layers)
        for (int i : layer.act_idx) touched[static_cast<std::size_t>(i)] = true;
    for (bool t : touched) CHECK(t);
}

TEST_CASE("parameter vector round-trips and has the hand-counted length") {
    // dim 5, 3 layers, hidden 16: layers alternate 3-pass/2-act and 2-pass/3-act.
    // Each net holds w1 (h x in) + b1 (h) + w2 (out x h) + b2 (out).
    FlowModel m = new_flow(5, 3, 16, 9);
    const Index net_32 = 16 * 3 + 16 + 2 * 16 + 2;   // 3 in, 2 out
    const Index net_23 = 16 * 2 + 16 + 3 * 16 + 3;   // 2 in, 3 out
    CHECK(m.n_params() == 2 * net_32 + 2 * net_23 + 2 * net_32);

    Vector theta = random_vector(m.n_params(), 77, 0.3);
    m.set_params(theta);
    Vector back = m.params();
    CHECK((back - theta).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(m.set_params(Vector::Zero(theta.size() + 1)), DimMismatch);
}

TEST_CASE("zero-parameter flow is the identity with zero log-det") {
    FlowModel m = identity_flow(6, 4, 8);
    Vector z = random_vector(6, 5);
    auto [x, logdet] = m.forward(z);
    CHECK((x - z).cwiseAbs().maxCoeff() == 0.0);
    CHECK(logdet == 0.0);
    auto [back, inv_logdet] = m.inverse(x);
    CHECK((back - z).cwiseAbs().maxCoeff() == 0.0);
    CHECK(inv_logdet == 0.0);
}

TEST_CASE("identity flow reproduces the standard normal log-density") {
    FlowModel m = identity_flow(15, 5, 8);
    CHECK(std::abs(m.log_prob(Vector::Zero(15)) - (-7.5 * kLn2Pi)) < 1e-9);

    // Fresh networks keep zero biases, so the origin still maps to itself.
    FlowModel fresh = new_flow(15, 5, 32, 123);
    CHECK(std::abs(fresh.log_prob(Vector::Zero(15)) - (-7.5 * kLn2Pi)) < 1e-9);

    Vector x = random_vector(15, 8);
    double expect = -0.5 * x.squaredNorm() - 7.5 * kLn2Pi;
    CHECK(m.log_prob(x) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("standardization shifts the identity flow density analytically") {
    FlowModel m = identity_flow(3, 2, 4);
    m.standardize_mean = Vector(3);
    m.standardize_mean << 1.0, -2.0, 0.5;
    m.standardize_scale = Vector(3);
    m.standardize_scale << 2.0, 0.5, 1.5;

    Vector x = random_vector(3, 21);
    Vector u = (x - m.standardize_mean).cwiseQuotient(m.standardize_scale);
    double expect = -0.5 * u.squaredNorm() - 1.5 * kLn2Pi -
                    m.standardize_scale.array().log().sum();
    CHECK(m.log_prob(x) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("constant coupling networks give a hand-checkable affine layer") {
    // One layer on R^2: coordinate 0 passes, coordinate 1 becomes
    // z1 * exp(alpha) + shift with alpha, shift independent of the input.
    const double alpha = 0.7;
    const double shift = -0.3;
    FlowModel m = new_flow(2, 1, 3, 0);
    auto& layer = m.layers[0];
    layer.scale_net.w1.setZero();
    layer.scale_net.w2.setZero();
    layer.scale_net.b2.setConstant(5.0 * std::atanh(alpha / 5.0));  // undoes the clamp
    layer.shift_net.w1.setZero();
    layer.shift_net.w2.setZero();
    layer.shift_net.b2.setConstant(shift);

    Vector z(2);
    z << 0.4, -1.1;
    auto [x, logdet] = m.forward(z);
    CHECK(x(0) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(x(1) == doctest::Approx(-1.1 * std::exp(alpha) + shift).epsilon(1e-12));
    CHECK(logdet == doctest::Approx(alpha).epsilon(1e-12));

    auto [back, inv_logdet] = m.inverse(x);
    CHECK((back - z).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(inv_logdet == doctest::Approx(-alpha).epsilon(1e-12));

    double expect = -0.5 * z.squaredNorm() - kLn2Pi - alpha;
    CHECK(m.log_prob(x) == doctest::Approx(expect).epsilon(1e-11));
}

TEST_CASE("scale outputs saturate at the clamp instead of exploding") {
    FlowModel m = new_flow(2, 1, 3, 0);
    m.layers[0].scale_net.w1.setZero();
    m.layers[0].scale_net.w2.setZero();
    m.layers[0].scale_net.b2.setConstant(100.0);  // raw output far past the clamp
    Vector z(2);
    z << 0.0, 1.0;
    auto [x, logdet] = m.forward(z);
    CHECK(logdet <= 5.0 + 1e-12);
    CHECK(logdet > 4.999);
    CHECK(x(1) == doctest::Approx(std::exp(logdet)).epsilon(1e-12));
}

TEST_CASE("forward and inverse round-trip across dimensions") {
    for (int dim : {2, 4, 15}) {
        FlowModel m = random_flow(dim, 5, 16, 100 + static_cast<std::uint64_t>(dim));
        for (int t = 0; t < 200; ++t) {
            Vector z = random_vector(dim, 5000 + static_cast<std::uint64_t>(100 * dim + t), 1.5);
            auto [x, logdet_f] = m.forward(z);
            auto [back, logdet_i] = m.inverse(x);
            CHECK((back - z).cwiseAbs().maxCoeff() < 1e-8);
            CHECK(std::abs(logdet_f + logdet_i) < 1e-10);
        }
    }
}

TEST_CASE("analytic log-det matches the numerical Jacobian determinant") {
    FlowModel m = random_flow(4, 5, 16, 42);
    for (int t = 0; t < 20; ++t) {
        Vector z = random_vector(4, 900 + static_cast<std::uint64_t>(t), 1.2);
        auto [x, logdet] = m.forward(z);
        Matrix jac = numeric_jacobian(m, z, 1e-6);
        double numeric = std::log(std::abs(jac.determinant()));
        CHECK(std::abs(logdet - numeric) < 1e-6);
    }
}

TEST_CASE("parameter gradient matches central finite differences") {
    FlowModel m = random_flow(4, 2, 8, 7);
    m.standardize_mean = random_vector(4, 31, 0.5);
    m.standardize_scale = random_vector(4, 32, 0.2).array().abs() + 0.5;
    Matrix batch = random_rows(8, 4, 11, 1.3);

    auto [nll, grad] = nll_grad(m, batch);
    CHECK(std::isfinite(nll));
    Vector theta = m.params();
    const double h = 1e-5;
    double worst = 0.0;
    for (Index i = 0; i < theta.size(); ++i) {
        Vector tp = theta, tm = theta;
        tp(i) += h;
        tm(i) -= h;
        double numeric = (nll_at(m, tp, batch) - nll_at(m, tm, batch)) / (2.0 * h);
        worst = std::max(worst, rel_err(grad(i), numeric));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("input gradient matches central finite differences") {
    FlowModel m = random_flow(3, 3, 8, 17);
    m.standardize_mean = random_vector(3, 41, 0.5);
    m.standardize_scale = random_vector(3, 42, 0.2).array().abs() + 0.5;
    Matrix batch = random_rows(5, 3, 13, 1.1);

    Matrix grad = nll_input_grad(m, batch);
    const double h = 1e-5;
    double worst = 0.0;
    for (Index i = 0; i < batch.rows(); ++i) {
        for (Index j = 0; j < batch.cols(); ++j) {
            Matrix bp = batch, bm = batch;
            bp(i, j) += h;
            bm(i, j) -= h;
            double numeric =
                (nll_grad(m, bp).first - nll_grad(m, bm).first) / (2.0 * h);
            worst = std::max(worst, rel_err(grad(i, j), numeric));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("mean NLL of the identity flow is the Gaussian average energy") {
    FlowModel m = identity_flow(3, 2, 4);
    Matrix batch = random_rows(6, 3, 19);
    double expect = 0.5 * batch.array().square().rowwise().sum().mean() + 1.5 * kLn2Pi;
    auto [nll, grad] = nll_grad(m, batch);
    CHECK(nll == doctest::Approx(expect).epsilon(1e-12));
    // At zero parameters the shift-net output biases feel pull toward the
    // batch mean: d(nll)/d(b2) = -mean residual of the acted coordinates.
    CHECK(grad.size() == m.n_params());
}

TEST_CASE("sampling is seed-deterministic and matches the standardization moments") {
    FlowModel m = identity_flow(2, 2, 4);
    m.standardize_mean = Vector(2);
    m.standardize_mean << 1.5, -0.5;
    m.standardize_scale = Vector(2);
    m.standardize_scale << 2.0, 0.5;

    Matrix s1 = m.sample(20000, 99);
    Matrix s2 = m.sample(20000, 99);
    CHECK((s1 - s2).cwiseAbs().maxCoeff() == 0.0);
    Matrix s3 = m.sample(20000, 100);
    CHECK((s1 - s3).cwiseAbs().maxCoeff() > 0.0);

    CHECK(s1.rows() == 20000);
    CHECK(s1.cols() == 2);
    for (int j = 0; j < 2; ++j) {
        double mean = s1.col(j).mean();
        double sd = std::sqrt((s1.col(j).array() - mean).square().sum() / (s1.rows() - 1));
        CHECK(std::abs(mean - m.standardize_mean(j)) < 0.05 * m.standardize_scale(j));
        CHECK(std::abs(sd - m.standardize_scale(j)) < 0.03 * m.standardize_scale(j));
    }
}

TEST_CASE("log_prob_rows agrees with per-vector log_prob") {
    FlowModel m = random_flow(4, 3, 8, 55);
    Matrix rows = random_rows(7, 4, 66);
    Vector lp = m.log_prob_rows(rows);
    for (Index i = 0; i < rows.rows(); ++i)
        CHECK(lp(i) == doctest::Approx(m.log_prob(rows.row(i).transpose())).epsilon(1e-13));
}

TEST_CASE("training lowers the NLL of curved data below any Gaussian fit") {
    // Coordinate 1 follows a noisy quadratic in coordinate 0, so an affine
    // coupling conditioned on coordinate 0 can capture it while no Gaussian
    // can: the per-coordinate Gaussian optimum is D/2*(1+ln(2*pi)) plus the
    // log standard deviations.
    std::mt19937_64 rng(77);
    std::normal_distribution<double> noise(0.0, 1.0);
    const Index n = 1024;
    Matrix data(n, 2);
    for (Index i = 0; i < n; ++i) {
        double x0 = noise(rng);
        data(i, 0) = x0;
        data(i, 1) = 0.5 * x0 * x0 - 1.0 + 0.1 * noise(rng);
    }
    double log_sd_sum = 0.0;
    for (int j = 0; j < 2; ++j) {
        double mean = data.col(j).mean();
        log_sd_sum += 0.5 * std::log((data.col(j).array() - mean).square().sum() / (n - 1));
    }
    const double gaussian_baseline = 1.0 + kLn2Pi + log_sd_sum;

    FlowTrainConfig cfg;
    cfg.epochs = 400;
    cfg.lr = 1e-2;
    cfg.batch_size = 64;
    cfg.seed = 5;
    auto [trained, report] = train_flow(new_flow(2, 4, 16, 3), data, cfg);

    REQUIRE(report.epoch_nll.size() == 400);
    CHECK(report.epoch_nll.front() > report.epoch_nll.back());
    CHECK(report.epoch_nll.front() < gaussian_baseline + 0.1);  // starts near identity
    CHECK(report.epoch_nll.back() < gaussian_baseline - 1.0);   // learned the dependency

    // Stored standardization matches the column moments of the training data.
    for (int j = 0; j < 2; ++j) {
        double mean = data.col(j).mean();
        double sd = std::sqrt((data.col(j).array() - mean).square().sum() / (n - 1));
        CHECK(trained.standardize_mean(j) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(trained.standardize_scale(j) == doctest::Approx(sd).epsilon(1e-12));
    }

    // NLL reported by nll_grad on the whole set agrees with the density sum.
    double mean_lp = trained.log_prob_rows(data).mean();
    CHECK(nll_grad(trained, data).first == doctest::Approx(-mean_lp).epsilon(1e-10));
}

TEST_CASE("training is deterministic for a fixed seed") {
    Matrix data = random_rows(200, 3, 8, 1.0).array() + 0.2;
    FlowTrainConfig cfg;
    cfg.epochs = 20;
    cfg.lr = 5e-3;
    cfg.batch_size = 32;
    cfg.seed = 11;
    auto [m1, r1] = train_flow(new_flow(3, 3, 8, 2), data, cfg);
    auto [m2, r2] = train_flow(new_flow(3, 3, 8, 2), data, cfg);
    CHECK((m1.params() - m2.params()).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(r1.epoch_nll.size() == r2.epoch_nll.size());
    for (std::size_t i = 0; i < r1.epoch_nll.size(); ++i)
        CHECK(r1.epoch_nll[i] == r2.epoch_nll[i]);

    cfg.seed = 12;
    auto [m3, r3] = train_flow(new_flow(3, 3, 8, 2), data, cfg);
    CHECK((m1.params() - m3.params()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("flow constructors and entry points reject invalid input") {
    CHECK_THROWS_AS(new_flow(1, 2, 8, 0), DimTooSmall);
    CHECK_THROWS_AS(new_flow(4, 0, 8, 0), InvalidConfig);
    CHECK_THROWS_AS(new_flow(4, 2, 0, 0), InvalidConfig);

    FlowModel m = new_flow(3, 2, 4, 0);
    CHECK_THROWS_AS(m.forward(Vector::Zero(2)), DimMismatch);
    CHECK_THROWS_AS(m.inverse(Vector::Zero(4)), DimMismatch);
    CHECK_THROWS_AS(m.log_prob_rows(Matrix::Zero(2, 2)), DimMismatch);
    CHECK_THROWS_AS(m.sample(0, 1), InvalidConfig);

    Vector bad = Vector::Zero(3);
    bad(1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(m.forward(bad), NonFiniteInput);
    CHECK_THROWS_AS(m.log_prob(bad), NonFiniteInput);

    Matrix batch = Matrix::Zero(2, 3);
    CHECK_THROWS_AS(nll_grad(m, Matrix::Zero(0, 3)), EmptyDataset);
    CHECK_THROWS_AS(nll_grad(m, Matrix::Zero(2, 4)), DimMismatch);

    FlowTrainConfig cfg;
    CHECK_THROWS_AS(train_flow(m, Matrix::Zero(0, 3), cfg), EmptyDataset);
    CHECK_THROWS_AS(train_flow(m, Matrix::Zero(5, 2), cfg), DimMismatch);
    cfg.epochs = 0;
    CHECK_THROWS_AS(train_flow(m, batch, cfg), InvalidConfig);
    cfg.epochs = 1;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(train_flow(m, batch, cfg), InvalidConfig);
}
