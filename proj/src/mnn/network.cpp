#include "opmodenet/errors.hpp"
#include "opmodenet/mnn.hpp"

#include <cmath>
#include <numeric>

namespace opmodenet::mnn {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, Activation a) {
    if (a == Activation::relu) return pre.cwiseMax(0.0);
    return pre.array().tanh().matrix();
}

Eigen::MatrixXd activation_derivative(const Eigen::MatrixXd& pre, Activation a) {
    if (a == Activation::relu) return (pre.array() > 0.0).cast<double>().matrix();
    return (1.0 - pre.array().tanh().square()).matrix();
}

Eigen::MatrixXd affine(const Dense& layer, const Eigen::MatrixXd& x) {
    return (layer.w * x).colwise() + layer.b;
}

/// Scaled keep mask for inverted dropout, drawn in column-major order.
Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    const double keep_scale = 1.0 / (1.0 - p);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
    return m;
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd y(z.rows(), z.cols());
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double mx = z.col(c).maxCoeff();
        y.col(c) = (z.col(c).array() - mx).exp().matrix();
        y.col(c) /= y.col(c).sum();
    }
    return y;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
std::string to_string(LossKind l) { return l == LossKind::mse ? "mse" : "cross_entropy"; }

Activation parse_activation(std::string_view s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

LossKind parse_loss(std::string_view s) {
    if (s == "mse") return LossKind::mse;
    if (s == "cross_entropy") return LossKind::cross_entropy;
    throw ConfigError("unknown loss '" + std::string(s) + "'");
}

std::size_t NetworkLayout::output_dim() const { return std::accumulate(heads.begin(), heads.end(), std::size_t{0}); }

std::pair<std::size_t, std::size_t> NetworkLayout::layer_shape(std::size_t i) const {
    if (i == 0) return {shared[0], input_dim};
    if (i == 1) return {shared[1], shared[0]};
    if (i < 2 + kModules) return {trunk, shared[1]};
    if (i < kLayerCount) return {heads[i - 2 - kModules], trunk};
    throw ShapeError("layer index out of range");
}

void NetworkLayout::validate() const {
    if (input_dim == 0 || shared[0] == 0 || shared[1] == 0 || trunk == 0) throw ConfigError("layer widths must be >= 1");
    for (auto h : heads)
        if (h == 0) throw ConfigError("head widths must be >= 1");
    if (output_dim() != opmode::kBinCount) throw ConfigError("head widths must sum to 23");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::size_t parameter_count(const NetworkLayout& layout) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        const auto [rows, cols] = layout.layer_shape(i);
        n += rows * cols + rows;
    }
    return n;
}

Layers zero_layers(const NetworkLayout& layout) {
    Layers layers;
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        const auto [rows, cols] = layout.layer_shape(i);
        layers[i].w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        layers[i].b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
    }
    return layers;
}

std::vector<double> flatten(const Layers& layers) {
    std::vector<double> out;
    for (const auto& l : layers) {
        out.insert(out.end(), l.w.data(), l.w.data() + l.w.size());
        out.insert(out.end(), l.b.data(), l.b.data() + l.b.size());
    }
    return out;
}

void unflatten(Layers& layers, std::span<const double> values) {
    std::size_t pos = 0;
    for (auto& l : layers) {
        const auto nw = static_cast<std::size_t>(l.w.size());
        const auto nb = static_cast<std::size_t>(l.b.size());
        if (pos + nw + nb > values.size()) throw ShapeError("unflatten: too few values");
        std::copy_n(values.data() + pos, nw, l.w.data());
        pos += nw;
        std::copy_n(values.data() + pos, nb, l.b.data());
        pos += nb;
    }
    if (pos != values.size()) throw ShapeError("unflatten: too many values");
}

ModelParameters init(const NetworkLayout& layout, std::uint64_t seed) {
    layout.validate();
    ModelParameters p;
    p.layout = layout;
    p.seed = seed;
    p.layers = zero_layers(layout);
    p.adam_m = zero_layers(layout);
    p.adam_v = zero_layers(layout);
    Rng rng(seed);
    for (auto& l : p.layers) {
        const double limit = std::sqrt(6.0 / static_cast<double>(l.w.rows() + l.w.cols()));
        for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = rng.uniform(-limit, limit);
    }
    return p;
}

Eigen::MatrixXd forward(const ModelParameters& params, const Eigen::MatrixXd& x, Mode mode, Rng* rng,
                        ForwardCache* cache) {
    const auto& lay = params.layout;
    if (static_cast<std::size_t>(x.rows()) != lay.input_dim)
        throw ShapeError("input has " + std::to_string(x.rows()) + " features, layout expects " +
                         std::to_string(lay.input_dim));
    const bool drop = mode == Mode::train && lay.dropout > 0.0;
    if (drop && !rng) throw ConfigError("train-mode forward needs a random source");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    const auto& L = params.layers;
    c.input = x;
    c.pre1 = affine(L[0], x);
    c.out1 = activate(c.pre1, lay.activation);
    if (drop) {
        c.mask1 = dropout_mask(c.out1.rows(), c.out1.cols(), lay.dropout, *rng);
        c.out1 = c.out1.cwiseProduct(c.mask1);
    } else {
        c.mask1.resize(0, 0);
    }
    c.pre2 = affine(L[1], c.out1);
    c.out2 = activate(c.pre2, lay.activation);
    if (drop) {
        c.mask2 = dropout_mask(c.out2.rows(), c.out2.cols(), lay.dropout, *rng);
        c.out2 = c.out2.cwiseProduct(c.mask2);
    } else {
        c.mask2.resize(0, 0);
    }
    Eigen::MatrixXd logits(static_cast<Eigen::Index>(lay.output_dim()), x.cols());
    Eigen::Index row = 0;
    for (std::size_t m = 0; m < kModules; ++m) {
        c.pre_t[m] = affine(L[2 + m], c.out2);
        c.out_t[m] = activate(c.pre_t[m], lay.activation);
        if (drop) {
            c.mask_t[m] = dropout_mask(c.out_t[m].rows(), c.out_t[m].cols(), lay.dropout, *rng);
            c.out_t[m] = c.out_t[m].cwiseProduct(c.mask_t[m]);
        } else {
            c.mask_t[m].resize(0, 0);
        }
        const Eigen::MatrixXd z = affine(L[2 + kModules + m], c.out_t[m]);
        logits.middleRows(row, z.rows()) = z;
        row += z.rows();
    }
    c.output = softmax_columns(logits);
    return c.output;
}

double loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, LossKind kind) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("loss: shape mismatch");
    if (pred.cols() == 0) return 0.0;
    const double n = static_cast<double>(pred.cols());
    if (kind == LossKind::mse) return (pred - target).squaredNorm() / (static_cast<double>(pred.rows()) * n);
    return -(target.array() * pred.array().max(1e-300).log()).sum() / n;
}

double loss(const opmode::OpModeDistribution& pred, const opmode::OpModeDistribution& target) {
    double s = 0.0;
    for (std::size_t i = 0; i < opmode::kBinCount; ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return s / static_cast<double>(opmode::kBinCount);
}

Layers backward(const ModelParameters& params, const ForwardCache& c, const Eigen::MatrixXd& target, LossKind kind) {
    const auto& lay = params.layout;
    const auto& L = params.layers;
    const Eigen::MatrixXd& y = c.output;
    if (target.rows() != y.rows() || target.cols() != y.cols()) throw ShapeError("backward: target shape mismatch");
    const double n = static_cast<double>(y.cols());

    Eigen::MatrixXd dz;
    if (kind == LossKind::mse) {
        const Eigen::MatrixXd dy = 2.0 * (y - target) / (static_cast<double>(y.rows()) * n);
        // Softmax Jacobian: dz = y * (dy - <y, dy>) per column.
        const Eigen::RowVectorXd inner = y.cwiseProduct(dy).colwise().sum();
        dz = y.cwiseProduct(dy - Eigen::MatrixXd::Ones(y.rows(), 1) * inner);
    } else {
        const Eigen::RowVectorXd mass = target.colwise().sum();
        dz = (y.cwiseProduct(Eigen::MatrixXd::Ones(y.rows(), 1) * mass) - target) / n;
    }

    Layers g = zero_layers(lay);
    Eigen::MatrixXd d_out2 = Eigen::MatrixXd::Zero(c.out2.rows(), c.out2.cols());
    Eigen::Index row = 0;
    for (std::size_t m = 0; m < kModules; ++m) {
        const std::size_t hi = 2 + kModules + m;
        const std::size_t ti = 2 + m;
        const Eigen::MatrixXd dzm = dz.middleRows(row, static_cast<Eigen::Index>(lay.heads[m]));
        row += dzm.rows();
        g[hi].w = dzm * c.out_t[m].transpose();
        g[hi].b = dzm.rowwise().sum();
        Eigen::MatrixXd d_t = L[hi].w.transpose() * dzm;
        if (c.mask_t[m].size()) d_t = d_t.cwiseProduct(c.mask_t[m]);
        const Eigen::MatrixXd d_pre = d_t.cwiseProduct(activation_derivative(c.pre_t[m], lay.activation));
        g[ti].w = d_pre * c.out2.transpose();
        g[ti].b = d_pre.rowwise().sum();
        d_out2 += L[ti].w.transpose() * d_pre;
    }
    if (c.mask2.size()) d_out2 = d_out2.cwiseProduct(c.mask2);
    const Eigen::MatrixXd d_pre2 = d_out2.cwiseProduct(activation_derivative(c.pre2, lay.activation));
    g[1].w = d_pre2 * c.out1.transpose();
    g[1].b = d_pre2.rowwise().sum();
    Eigen::MatrixXd d_out1 = L[1].w.transpose() * d_pre2;
    if (c.mask1.size()) d_out1 = d_out1.cwiseProduct(c.mask1);
    const Eigen::MatrixXd d_pre1 = d_out1.cwiseProduct(activation_derivative(c.pre1, lay.activation));
    g[0].w = d_pre1 * c.input.transpose();
    g[0].b = d_pre1.rowwise().sum();
    return g;
}

void adam_step(ModelParameters& p, const Layers& g, const AdamConfig& cfg) {
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    auto update = [&](auto& theta, auto& m, auto& v, const auto& grad) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        theta.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
    };
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        update(p.layers[i].w, p.adam_m[i].w, p.adam_v[i].w, g[i].w);
        update(p.layers[i].b, p.adam_m[i].b, p.adam_v[i].b, g[i].b);
    }
}

}  // namespace opmodenet::mnn
