#include "specflow/flow.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

// Batched RealNVP-style affine coupling stack. Blocks are dim x n with one
// sample per column. Log-densities come from the change-of-variables rule:
// log p(x) = log N(z; 0, I) + log|det dz/dx|, z the inverse image of x, with
// per-layer log-dets read off the (triangular) coupling Jacobians. Gradients
// are exact reverse-mode through the inverse path, including the log-det
// terms.

namespace specflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Matrix gather_rows(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(static_cast<Index>(idx.size()), m.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = m.row(idx[k]);
    return out;
}

void scatter_rows(Matrix& m, const std::vector<int>& idx, const Matrix& rows) {
    for (std::size_t k = 0; k < idx.size(); ++k) m.row(idx[k]) = rows.row(static_cast<Index>(k));
}

struct NetCache {
    Matrix input;   // in x n
    Matrix hidden;  // hidden x n, post-tanh
};

Matrix net_forward(const CouplingNet& net, const Matrix& in, NetCache* cache) {
    Matrix hidden = ((net.w1 * in).colwise() + net.b1).array().tanh().matrix();
    Matrix out = (net.w2 * hidden).colwise() + net.b2;
    if (cache) {
        cache->input = in;
        cache->hidden = std::move(hidden);
        return out;
    }
    return out;
}

struct NetGrad {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    static NetGrad zeros_like(const CouplingNet& net) {
        return {Matrix::Zero(net.w1.rows(), net.w1.cols()), Vector::Zero(net.b1.size()),
                Matrix::Zero(net.w2.rows(), net.w2.cols()), Vector::Zero(net.b2.size())};
    }
};

// Accumulates parameter gradients for `gout` at the cached activations and
// returns the gradient with respect to the net input.
Matrix net_backward(const CouplingNet& net, const NetCache& cache, const Matrix& gout,
                    NetGrad& grad) {
    grad.w2 += gout * cache.hidden.transpose();
    grad.b2 += gout.rowwise().sum();
    Matrix ghidden = net.w2.transpose() * gout;
    Matrix gpre = (ghidden.array() * (1.0 - cache.hidden.array().square())).matrix();
    grad.w1 += gpre * cache.input.transpose();
    grad.b1 += gpre.rowwise().sum();
    return net.w1.transpose() * gpre;
}

Matrix clamp_scale(const Matrix& raw, double s) {
    return (s * (raw.array() / s).tanh()).matrix();
}

struct LayerGrads {
    NetGrad scale;
    NetGrad shift;
};

struct LayerCache {
    NetCache scale_cache;
    NetCache shift_cache;
    Matrix alpha;    // clamped scale outputs, act x n
    Matrix exp_neg;  // exp(-alpha)
    Matrix act_out;  // z-side act part produced by this inversion step
};

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw NonFiniteInput(std::string(what) + " contains a non-finite value");
}

// x -> z through the whole stack, caching activations for backprop.
// Returns z in `cur`; `sum_alpha` collects the per-column sum of all clamped
// scale outputs (= -log-det of the inverse map).
void inverse_with_cache(const FlowModel& model, Matrix& cur, Eigen::RowVectorXd& sum_alpha,
                        std::vector<LayerCache>* caches) {
    sum_alpha.setZero(cur.cols());
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const auto& layer = model.layers[li];
        LayerCache local;
        LayerCache* c = caches ? &(*caches)[li] : &local;
        Matrix pass = gather_rows(cur, layer.pass_idx);
        Matrix act = gather_rows(cur, layer.act_idx);
        Matrix raw = net_forward(layer.scale_net, pass, caches ? &c->scale_cache : nullptr);
        c->alpha = clamp_scale(raw, model.scale_clamp);
        Matrix mu = net_forward(layer.shift_net, pass, caches ? &c->shift_cache : nullptr);
        c->exp_neg = (-c->alpha.array()).exp().matrix();
        c->act_out = ((act - mu).array() * c->exp_neg.array()).matrix();
        scatter_rows(cur, layer.act_idx, c->act_out);
        sum_alpha += c->alpha.colwise().sum();
    }
}

void forward_block(const FlowModel& model, Matrix& cur, Eigen::RowVectorXd& logdet) {
    logdet.setZero(cur.cols());
    for (const auto& layer : model.layers) {
        Matrix pass = gather_rows(cur, layer.pass_idx);
        Matrix act = gather_rows(cur, layer.act_idx);
        Matrix alpha = clamp_scale(net_forward(layer.scale_net, pass, nullptr), model.scale_clamp);
        Matrix mu = net_forward(layer.shift_net, pass, nullptr);
        act = (act.array() * alpha.array().exp() + mu.array()).matrix();
        scatter_rows(cur, layer.act_idx, act);
        logdet += alpha.colwise().sum();
    }
}

// Mean NLL of a standardized block and (optionally) gradients. The
// standardization log-det constant is NOT included here.
double nll_core(const FlowModel& model, const Matrix& ublock, std::vector<LayerGrads>* grads,
                Matrix* input_grad) {
    const Index n = ublock.cols();
    const Index dim = ublock.rows();
    Matrix cur = ublock;
    Eigen::RowVectorXd sum_alpha;
    std::vector<LayerCache> caches(model.layers.size());
    inverse_with_cache(model, cur, sum_alpha, &caches);

    double total = 0.5 * cur.squaredNorm() + 0.5 * kLog2Pi * static_cast<double>(dim * n) +
                   sum_alpha.sum();

    if (grads || input_grad) {
        Matrix g = cur;  // d(total)/dz
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            const auto& layer = model.layers[li];
            auto& c = caches[li];
            Matrix g_pass = gather_rows(g, layer.pass_idx);
            Matrix g_act = gather_rows(g, layer.act_idx);

            // act_out = (act_in - mu) .* exp(-alpha); the loss also carries a
            // direct +alpha term per entry from the log-det.
            Matrix g_alpha =
                ((-g_act.array() * c.act_out.array()) + 1.0).matrix();
            Matrix g_mu = (-g_act.array() * c.exp_neg.array()).matrix();
            Matrix g_act_in = (g_act.array() * c.exp_neg.array()).matrix();

            Matrix g_raw =
                (g_alpha.array() * (1.0 - (c.alpha.array() / model.scale_clamp).square()))
                    .matrix();
            Matrix g_pass_total = std::move(g_pass);
            if (grads) {
                g_pass_total += net_backward(layer.scale_net, c.scale_cache, g_raw,
                                             (*grads)[li].scale);
                g_pass_total += net_backward(layer.shift_net, c.shift_cache, g_mu,
                                             (*grads)[li].shift);
            } else {
                NetGrad scratch_s = NetGrad::zeros_like(layer.scale_net);
                NetGrad scratch_t = NetGrad::zeros_like(layer.shift_net);
                g_pass_total += net_backward(layer.scale_net, c.scale_cache, g_raw, scratch_s);
                g_pass_total += net_backward(layer.shift_net, c.shift_cache, g_mu, scratch_t);
            }
            scatter_rows(g, layer.act_idx, g_act_in);
            scatter_rows(g, layer.pass_idx, g_pass_total);
        }
        if (input_grad) *input_grad = g;
    }
    return total / static_cast<double>(n);
}

Matrix standardize_block(const FlowModel& model, const Matrix& rows) {
    Matrix block = rows.transpose();
    block.colwise() -= model.standardize_mean;
    block.array().colwise() /= model.standardize_scale.array();
    return block;
}

double log_scale_sum(const FlowModel& model) {
    return model.standardize_scale.array().log().sum();
}

void flatten_net(const CouplingNet& net, Vector& out, Index& pos) {
    auto put = [&](const double* data, Index size) {
        out.segment(pos, size) = Eigen::Map<const Vector>(data, size);
        pos += size;
    };
    put(net.w1.data(), net.w1.size());
    put(net.b1.data(), net.b1.size());
    put(net.w2.data(), net.w2.size());
    put(net.b2.data(), net.b2.size());
}

void unflatten_net(CouplingNet& net, const Vector& in, Index& pos) {
    auto get = [&](double* data, Index size) {
        Eigen::Map<Vector>(data, size) = in.segment(pos, size);
        pos += size;
    };
    get(net.w1.data(), net.w1.size());
    get(net.b1.data(), net.b1.size());
    get(net.w2.data(), net.w2.size());
    get(net.b2.data(), net.b2.size());
}

Index net_size(const CouplingNet& net) {
    return net.w1.size() + net.b1.size() + net.w2.size() + net.b2.size();
}

}  // namespace

FlowModel new_flow(int dim, int n_layers, int hidden_width, std::uint64_t seed) {
    if (dim < 2) throw DimTooSmall("coupling needs dim >= 2, got " + std::to_string(dim));
    if (n_layers < 1) throw InvalidConfig("n_layers must be >= 1");
    if (hidden_width < 1) throw InvalidConfig("hidden_width must be >= 1");

    FlowModel model;
    model.dim = dim;
    model.hidden_width = hidden_width;
    model.seed = seed;
    model.standardize_mean = Vector::Zero(dim);
    model.standardize_scale = Vector::Ones(dim);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> weight(0.0, 0.01);
    auto init_net = [&](Index in, Index out) {
        CouplingNet net;
        net.w1 = Matrix(hidden_width, in);
        net.b1 = Vector::Zero(hidden_width);
        net.w2 = Matrix(out, hidden_width);
        net.b2 = Vector::Zero(out);
        for (Index i = 0; i < net.w1.size(); ++i) net.w1.data()[i] = weight(rng);
        for (Index i = 0; i < net.w2.size(); ++i) net.w2.data()[i] = weight(rng);
        return net;
    };

    for (int l = 0; l < n_layers; ++l) {
        CouplingLayer layer;
        const int pass_parity = l % 2;  // even layers copy the even coordinates
        for (int i = 0; i < dim; ++i)
            (i % 2 == pass_parity ? layer.pass_idx : layer.act_idx).push_back(i);
        layer.scale_net = init_net(static_cast<Index>(layer.pass_idx.size()),
                                   static_cast<Index>(layer.act_idx.size()));
        layer.shift_net = init_net(static_cast<Index>(layer.pass_idx.size()),
                                   static_cast<Index>(layer.act_idx.size()));
        model.layers.push_back(std::move(layer));
    }

#ifndef NDEBUG
    if (n_layers >= 2) {
        std::vector<bool> transformed(static_cast<std::size_t>(dim), false);
        for (const auto& layer : model.layers)
            for (int i : layer.act_idx) transformed[static_cast<std::size_t>(i)] = true;
        for (bool t : transformed) assert(t && "mask stack leaves a coordinate untouched");
    }
#endif
    return model;
}

std::pair<Vector, double> FlowModel::forward(const Vector& z) const {
    if (z.size() != dim) throw DimMismatch("forward input has wrong dimension");
    check_finite(z, "forward input");
    Matrix cur = z;
    Eigen::RowVectorXd logdet;
    forward_block(*this, cur, logdet);
    return {Vector(cur.col(0)), logdet(0)};
}

std::pair<Vector, double> FlowModel::inverse(const Vector& x) const {
    if (x.size() != dim) throw DimMismatch("inverse input has wrong dimension");
    check_finite(x, "inverse input");
    Matrix cur = x;
    Eigen::RowVectorXd sum_alpha;
    inverse_with_cache(*this, cur, sum_alpha, nullptr);
    return {Vector(cur.col(0)), -sum_alpha(0)};
}

double FlowModel::log_prob(const Vector& x) const {
    Matrix rows = x.transpose();
    return log_prob_rows(rows)(0);
}

Vector FlowModel::log_prob_rows(const Matrix& rows) const {
    if (rows.cols() != dim) throw DimMismatch("log_prob input has wrong dimension");
    check_finite(rows, "log_prob input");
    Matrix cur = standardize_block(*this, rows);
    Eigen::RowVectorXd sum_alpha;
    inverse_with_cache(*this, cur, sum_alpha, nullptr);
    const double c = 0.5 * kLog2Pi * dim + log_scale_sum(*this);
    Vector out(rows.rows());
    for (Index i = 0; i < rows.rows(); ++i)
        out(i) = -0.5 * cur.col(i).squaredNorm() - sum_alpha(i) - c;
    return out;
}

Matrix FlowModel::sample(int n, std::uint64_t sample_seed) const {
    if (n < 1) throw InvalidConfig("sample count must be >= 1");
    std::mt19937_64 rng(sample_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z(dim, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < dim; ++i) z(i, j) = normal(rng);
    Eigen::RowVectorXd logdet;
    forward_block(*this, z, logdet);
    z.array().colwise() *= standardize_scale.array();
    z.colwise() += standardize_mean;
    return z.transpose();
}

Index FlowModel::n_params() const {
    Index total = 0;
    for (const auto& layer : layers) total += net_size(layer.scale_net) + net_size(layer.shift_net);
    return total;
}

Vector FlowModel::params() const {
    Vector theta(n_params());
    Index pos = 0;
    for (const auto& layer : layers) {
        flatten_net(layer.scale_net, theta, pos);
        flatten_net(layer.shift_net, theta, pos);
    }
    return theta;
}

void FlowModel::set_params(const Vector& theta) {
    if (theta.size() != n_params())
        throw DimMismatch("parameter vector has size " + std::to_string(theta.size()) +
                          ", expected " + std::to_string(n_params()));
    Index pos = 0;
    for (auto& layer : layers) {
        unflatten_net(layer.scale_net, theta, pos);
        unflatten_net(layer.shift_net, theta, pos);
    }
}

std::pair<double, Vector> nll_grad(const FlowModel& model, const Matrix& batch) {
    if (batch.rows() < 1) throw EmptyDataset("empty batch");
    if (batch.cols() != model.dim) throw DimMismatch("batch has wrong dimension");
    check_finite(batch, "nll batch");

    Matrix ublock = standardize_block(model, batch);
    std::vector<LayerGrads> grads;
    grads.reserve(model.layers.size());
    for (const auto& layer : model.layers)
        grads.push_back({NetGrad::zeros_like(layer.scale_net), NetGrad::zeros_like(layer.shift_net)});

    double nll = nll_core(model, ublock, &grads, nullptr) + log_scale_sum(model);

    Vector flat(model.n_params());
    Index pos = 0;
    const double inv_n = 1.0 / static_cast<double>(batch.rows());
    for (const auto& g : grads) {
        for (const NetGrad* ng : {&g.scale, &g.shift}) {
            auto put = [&](const auto& m) {
                flat.segment(pos, m.size()) =
                    Eigen::Map<const Vector>(m.data(), m.size()) * inv_n;
                pos += m.size();
            };
            put(ng->w1);
            put(ng->b1);
            put(ng->w2);
            put(ng->b2);
        }
    }
    return {nll, flat};
}

Matrix nll_input_grad(const FlowModel& model, const Matrix& batch) {
    if (batch.rows() < 1) throw EmptyDataset("empty batch");
    if (batch.cols() != model.dim) throw DimMismatch("batch has wrong dimension");
    check_finite(batch, "nll batch");

    Matrix ublock = standardize_block(model, batch);
    Matrix ugrad;
    nll_core(model, ublock, nullptr, &ugrad);
    ugrad.array().colwise() /= model.standardize_scale.array();
    ugrad /= static_cast<double>(batch.rows());
    return ugrad.transpose();
}

std::pair<FlowModel, TrainReport> train_flow(const FlowModel& model, const Matrix& latent_rows,
                                             const FlowTrainConfig& cfg) {
    if (latent_rows.rows() < 1) throw EmptyDataset("training set is empty");
    if (latent_rows.cols() != model.dim) throw DimMismatch("training data has wrong dimension");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0))
        throw InvalidConfig("bad training configuration");
    check_finite(latent_rows, "training data");

    FlowModel trained = model;
    const Index n = latent_rows.rows();
    const Index dim = latent_rows.cols();

    trained.standardize_mean = latent_rows.colwise().mean();
    Vector scale(dim);
    for (Index j = 0; j < dim; ++j) {
        double var = (latent_rows.col(j).array() - trained.standardize_mean(j)).square().sum() /
                     std::max<double>(1.0, static_cast<double>(n - 1));
        double sd = std::sqrt(var);
        scale(j) = sd > 1e-12 ? sd : 1.0;
    }
    trained.standardize_scale = scale;

    Matrix ublock = standardize_block(trained, latent_rows);  // dim x n
    const double const_term = log_scale_sum(trained);

    TrainReport report;
    report.epochs = cfg.epochs;
    report.lr = cfg.lr;
    report.batch_size = cfg.batch_size;
    report.seed = cfg.seed;

    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(cfg.seed);

    std::vector<LayerGrads> grads;
    for (const auto& layer : trained.layers)
        grads.push_back({NetGrad::zeros_like(layer.scale_net), NetGrad::zeros_like(layer.shift_net)});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        double epoch_total = 0.0;
        for (Index start = 0; start < n; start += cfg.batch_size) {
            const Index b = std::min<Index>(cfg.batch_size, n - start);
            Matrix batch(dim, b);
            for (Index k = 0; k < b; ++k)
                batch.col(k) = ublock.col(perm[static_cast<std::size_t>(start + k)]);

            for (auto& g : grads) {
                for (NetGrad* ng : {&g.scale, &g.shift}) {
                    ng->w1.setZero();
                    ng->b1.setZero();
                    ng->w2.setZero();
                    ng->b2.setZero();
                }
            }

            double nll = nll_core(trained, batch, &grads, nullptr);
            if (!std::isfinite(nll)) throw NumericError("non-finite training loss");
            epoch_total += nll * static_cast<double>(b);

            const double step = cfg.lr / static_cast<double>(b);
            for (std::size_t li = 0; li < trained.layers.size(); ++li) {
                auto& layer = trained.layers[li];
                auto apply = [&](CouplingNet& net, const NetGrad& g) {
                    net.w1 -= step * g.w1;
                    net.b1 -= step * g.b1;
                    net.w2 -= step * g.w2;
                    net.b2 -= step * g.b2;
                };
                apply(layer.scale_net, grads[li].scale);
                apply(layer.shift_net, grads[li].shift);
            }
        }
        report.epoch_nll.push_back(epoch_total / static_cast<double>(n) + const_term);
    }
    return {std::move(trained), std::move(report)};
}

}  // namespace specflow
