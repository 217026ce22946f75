#include <doctest.h>

#include "oracles.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/mnn.hpp"
#include "opmodenet/rng.hpp"

#include <cmath>
#include <numeric>

using namespace opmodenet;
using namespace opmodenet::mnn;

namespace {

NetworkLayout layout_of(std::size_t dim, double dropout = 0.3) {
    NetworkLayout l;
    l.input_dim = dim;
    l.dropout = dropout;
    return l;
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal(0.0, sd);
    return m;
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd out(z.rows(), z.cols());
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const Eigen::VectorXd e = (z.col(c).array() - z.col(c).maxCoeff()).exp();
        out.col(c) = e / e.sum();
    }
    return out;
}

double norm_of(const Layers& g) {
    const auto v = flatten(g);
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

/// Biases are zero after init; perturb them so every gradient path is exercised.
void jitter_biases(ModelParameters& p, Rng& rng) {
    for (auto& l : p.layers)
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b(i) = rng.normal(0.0, 0.1);
}

}  // namespace

TEST_CASE("parameter count for a ten-input layout") {
    CHECK(parameter_count(layout_of(10)) == 18743);
    CHECK(oracle::parameter_count(10) == 18743);
    CHECK(init(layout_of(10), 1).count() == 18743);
    CHECK(flatten(init(layout_of(10), 1).layers).size() == 18743);
}

TEST_CASE("property: parameter count matches the layer arithmetic") {
    Rng rng(77);
    for (int i = 0; i < 30; ++i) {
        const std::size_t dim = 1 + rng.uniform_index(400);
        CHECK(parameter_count(layout_of(dim)) == oracle::parameter_count(dim));
        CHECK(flatten(zero_layers(layout_of(dim))).size() == oracle::parameter_count(dim));
    }
}

TEST_CASE("layout validation") {
    CHECK_THROWS_AS(layout_of(0).validate(), ConfigError);
    CHECK_THROWS_AS(layout_of(5, 1.0).validate(), ConfigError);
    auto l = layout_of(5);
    l.heads = {2, 6, 9, 5};
    CHECK_THROWS_AS(l.validate(), ConfigError);
    CHECK(layout_of(5).output_dim() == 23);
    CHECK(layout_of(5).layer_shape(0) == std::pair<std::size_t, std::size_t>{128, 5});
    CHECK(layout_of(5).layer_shape(6) == std::pair<std::size_t, std::size_t>{2, 32});
    CHECK(layout_of(5).layer_shape(8) == std::pair<std::size_t, std::size_t>{9, 32});
}

TEST_CASE("init is deterministic with zero biases and bounded weights") {
    const auto a = init(layout_of(10), 2024);
    const auto b = init(layout_of(10), 2024);
    CHECK(flatten(a.layers) == flatten(b.layers));
    CHECK(flatten(init(layout_of(10), 2025).layers) != flatten(a.layers));
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        CHECK(a.layers[i].b.isZero(0.0));
        const auto [rows, cols] = a.layout.layer_shape(i);
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        CHECK(a.layers[i].w.cwiseAbs().maxCoeff() <= bound);
        CHECK(a.layers[i].w.cwiseAbs().maxCoeff() > 0.5 * bound);
    }
    CHECK(a.step == 0);
    CHECK(norm_of(a.adam_m) == 0.0);
}

TEST_CASE("forward: simplex output in both modes") {
    Rng rng(3);
    const auto p = init(layout_of(12), 5);
    const auto x = random_matrix(rng, 12, 200, 3.0);
    for (Mode m : {Mode::eval, Mode::train}) {
        const auto out = forward(p, x, m, &rng);
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
            CHECK(std::abs(out.col(c).sum() - 1.0) <= 1e-9);
            CHECK(out.col(c).minCoeff() > 0.0);
        }
    }
}

TEST_CASE("forward: zero parameters give the uniform distribution") {
    ModelParameters p = init(layout_of(7), 1);
    p.layers = zero_layers(p.layout);
    Rng rng(1);
    const auto out = forward(p, random_matrix(rng, 7, 3), Mode::eval);
    CHECK((out.array() - 1.0 / 23.0).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("forward: train mode is reproducible from the rng state") {
    const auto p = init(layout_of(6), 9);
    Rng data(4);
    const auto x = random_matrix(data, 6, 5);
    Rng r1(100), r2(100);
    CHECK(forward(p, x, Mode::train, &r1) == forward(p, x, Mode::train, &r2));
    Rng r3(101);
    CHECK(forward(p, x, Mode::train, &r3) != forward(p, x, Mode::train, &r1));
    const auto e1 = forward(p, x, Mode::eval);
    CHECK(forward(p, x, Mode::eval) == e1);
}

TEST_CASE("forward: without dropout train and eval agree") {
    const auto p = init(layout_of(6, 0.0), 9);
    Rng data(4), r(5);
    const auto x = random_matrix(data, 6, 5);
    CHECK(forward(p, x, Mode::train, &r) == forward(p, x, Mode::eval));
}

TEST_CASE("forward: input dimension is checked") {
    const auto p = init(layout_of(6), 9);
    CHECK_THROWS_AS(forward(p, Eigen::MatrixXd::Zero(5, 2), Mode::eval), ShapeError);
    const std::vector<double> wrong(4, 0.0);
    CHECK_THROWS_AS(predict_one(p, wrong), ShapeError);
}

TEST_CASE("loss closed forms") {
    Eigen::MatrixXd u = Eigen::MatrixXd::Constant(23, 1, 1.0 / 23.0);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(23, 1);
    onehot(1, 0) = 1.0;
    const double expected = (std::pow(1.0 - 1.0 / 23.0, 2) + 22.0 * std::pow(1.0 / 23.0, 2)) / 23.0;
    CHECK(loss(u, onehot) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(loss(u, u) == 0.0);

    Rng rng(6);
    const auto a = softmax_columns(random_matrix(rng, 23, 4));
    const auto b = softmax_columns(random_matrix(rng, 23, 4));
    double mean = 0.0;
    for (int c = 0; c < 4; ++c) mean += loss(a.col(c), b.col(c)) / 4.0;
    CHECK(loss(a, b) == doctest::Approx(mean).epsilon(1e-14));

    opmode::OpModeDistribution pd, td;
    for (std::size_t i = 0; i < 23; ++i) pd[i] = 1.0 / 23.0;
    td[1] = 1.0;
    CHECK(loss(pd, td) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("backward matches central differences") {
    Rng rng(2024);
    auto p = init(layout_of(10, 0.0), 2024);
    jitter_biases(p, rng);
    const auto x = random_matrix(rng, 10, 4);
    const auto y = softmax_columns(random_matrix(rng, 23, 4, 2.0));
    const auto r = oracle::gradient_check(p, x, y);
    CHECK(r.checked == 18743);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("backward vanishes at zero residual") {
    Rng rng(8);
    auto p = init(layout_of(10, 0.0), 8);
    jitter_biases(p, rng);
    const auto x = random_matrix(rng, 10, 6);
    ForwardCache cache;
    const auto out = forward(p, x, Mode::eval, nullptr, &cache);
    CHECK(norm_of(backward(p, cache, out)) < 1e-8);
}

TEST_CASE("backward is linear in the residual") {
    Rng rng(9);
    auto p = init(layout_of(10, 0.0), 9);
    jitter_biases(p, rng);
    const auto x = random_matrix(rng, 10, 5);
    ForwardCache cache;
    const auto out = forward(p, x, Mode::eval, nullptr, &cache);
    const auto r = random_matrix(rng, 23, 5, 0.01);
    const auto g1 = flatten(backward(p, cache, out + r));
    const auto g2 = flatten(backward(p, cache, out + 2.0 * r));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
        num += std::pow(g2[i] - 2.0 * g1[i], 2);
        den += std::pow(g2[i], 2);
    }
    CHECK(std::sqrt(num / den) < 1e-9);
}

TEST_CASE("adam: first step, zero gradient and symmetry") {
    auto p = init(layout_of(4), 10);
    const auto before = flatten(p.layers);
    Rng rng(11);
    Layers g = zero_layers(p.layout);
    for (auto& l : g) {
        l.w = random_matrix(rng, l.w.rows(), l.w.cols(), 0.1);
        l.b = random_matrix(rng, l.b.size(), 1, 0.1);
    }
    g[0].w(0, 0) = g[0].w(1, 0) = 0.037;
    AdamConfig cfg;
    adam_step(p, g, cfg);
    CHECK(p.step == 1);
    const auto after = flatten(p.layers);
    const auto gv = flatten(g);
    for (std::size_t i = 0; i < gv.size(); ++i) {
        const double expected = -cfg.learning_rate * gv[i] / (std::abs(gv[i]) + cfg.epsilon);
        CHECK(after[i] - before[i] == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(p.layers[0].w(0, 0) - init(layout_of(4), 10).layers[0].w(0, 0) ==
          doctest::Approx(p.layers[0].w(1, 0) - init(layout_of(4), 10).layers[0].w(1, 0)).epsilon(1e-12));

    auto q = init(layout_of(4), 10);
    adam_step(q, zero_layers(q.layout), cfg);
    CHECK(q.step == 1);
    CHECK(flatten(q.layers) == before);
}

TEST_CASE("split is a seeded partition") {
    const auto s = make_split(101, 0.8, 3);
    CHECK(s.train.size() == 81);
    CHECK(s.test.size() == 20);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    CHECK(make_split(101, 0.8, 3).train == s.train);
    CHECK(make_split(101, 0.8, 4).train != s.train);
}

TEST_CASE("training reduces loss on a linearly generated task") {
    Rng rng(12);
    const Eigen::Index dim = 10, n = 2000;
    const auto a = random_matrix(rng, 23, dim, 0.8);
    const auto x = random_matrix(rng, dim, n);
    const Eigen::MatrixXd y = softmax_columns(a * x);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.seed = 13;
    const auto r = train(x, y, cfg);
    REQUIRE(r.history.train_loss.size() == 300);
    CHECK(r.history.test_loss.size() == 300);
    CHECK(r.split.train.size() == 1600);
    CHECK(r.history.train_loss.back() < 0.2 * r.history.train_loss.front());
    CHECK(r.history.test_loss.back() < r.history.test_loss.front());
}

TEST_CASE("training is deterministic") {
    Rng rng(14);
    const auto x = random_matrix(rng, 5, 120);
    const auto y = softmax_columns(random_matrix(rng, 23, 120));
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 15;
    const auto a = train(x, y, cfg);
    const auto b = train(x, y, cfg);
    CHECK(a.history.train_loss == b.history.train_loss);
    CHECK(a.history.test_loss == b.history.test_loss);
    CHECK(flatten(a.params.layers) == flatten(b.params.layers));
    cfg.seed = 16;
    CHECK(train(x, y, cfg).history.train_loss != a.history.train_loss);
}

TEST_CASE("training can memorize a small set") {
    Rng rng(17);
    const Eigen::Index n = 200;
    const auto x = random_matrix(rng, 10, n);
    const Eigen::MatrixXd y = softmax_columns(random_matrix(rng, 23, n, 2.0));
    TrainConfig cfg;
    cfg.epochs = 2000;
    cfg.dropout = 0.0;
    cfg.seed = 18;
    Split all;
    for (Eigen::Index i = 0; i < n; ++i) all.train.push_back(static_cast<std::size_t>(i));
    all.test = all.train;
    const auto r = train(x, y, cfg, all);
    const double fitted = loss(predict(r.params, x), y);
    const double uniform = loss(Eigen::MatrixXd::Constant(23, n, 1.0 / 23.0), y);
    CHECK(fitted <= 1e-3);
    CHECK(fitted < 0.1 * uniform);
}

TEST_CASE("training rejects empty splits and bad configs") {
    Rng rng(19);
    const auto x = random_matrix(rng, 5, 10);
    const auto y = softmax_columns(random_matrix(rng, 23, 10));
    TrainConfig cfg;
    cfg.epochs = 1;
    Split empty;
    empty.test = {0, 1};
    CHECK_THROWS_AS(train(x, y, cfg, empty), ConfigError);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(train(x, Eigen::MatrixXd::Zero(23, 9), TrainConfig{}), ShapeError);
}

TEST_CASE("predict: simplex, determinism and the model marker") {
    Rng rng(20);
    const auto p = init(layout_of(8), 21);
    const auto x = random_matrix(rng, 8, 1000, 2.0);
    const auto out = predict(p, x);
    for (Eigen::Index c = 0; c < out.cols(); ++c) CHECK(std::abs(out.col(c).sum() - 1.0) <= 1e-9);
    CHECK(predict(p, x) == out);
    std::vector<double> one(x.col(0).data(), x.col(0).data() + 8);
    const auto d = predict_one(p, one);
    CHECK(d.support_seconds == 0);
    for (std::size_t b = 0; b < 23; ++b) CHECK(d[b] == doctest::Approx(out(static_cast<Eigen::Index>(b), 0)).epsilon(1e-12));
}

TEST_CASE("model json round trip and encoder binding") {
    Rng rng(22);
    const auto x = random_matrix(rng, 6, 40);
    const auto y = softmax_columns(random_matrix(rng, 23, 40));
    TrainConfig cfg;
    cfg.epochs = 3;
    auto r = train(x, y, cfg);
    ModelFile m{r.params, cfg, "abc123", r.history};
    const auto json = model_to_json(m);
    const auto back = model_from_json(json, std::string("abc123"));
    CHECK(flatten(back.params.layers) == flatten(m.params.layers));
    CHECK(flatten(back.params.adam_v) == flatten(m.params.adam_v));
    CHECK(back.params.step == m.params.step);
    CHECK(back.history.train_loss == m.history.train_loss);
    CHECK(model_to_json(back) == json);
    CHECK(predict(back.params, x) == predict(m.params, x));
    CHECK_THROWS_AS(model_from_json(json, std::string("other")), ValidationError);
    CHECK_THROWS_AS(model_from_json("[1,"), ParseError);
}

TEST_CASE("enum names") {
    CHECK(parse_activation(to_string(Activation::tanh)) == Activation::tanh);
    CHECK(parse_loss(to_string(LossKind::cross_entropy)) == LossKind::cross_entropy);
    CHECK_THROWS_AS(parse_activation("sigmoid"), ConfigError);
}
