#include "opmodenet/errors.hpp"
#include "opmodenet/mnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace opmodenet::mnn {

namespace {

// Independent streams for the split, initialization and training draws.
constexpr std::uint64_t kSplitStream = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kTrainStream = 0xD1B54A32D192ED03ULL;

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const std::size_t> cols) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(cols[i]));
    return out;
}

bool all_finite(const Layers& g) {
    for (const auto& l : g)
        if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("training.dropout must lie in [0, 1)");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("training.train_fraction must lie in (0, 1)");
    if (!(adam.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
}

Split make_split(std::size_t n, double train_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed ^ kSplitStream);
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, n)), idx.end());
    return s;
}

TrainResult train(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const TrainConfig& config,
                  std::optional<Split> split) {
    config.validate();
    if (x.cols() != y.cols()) throw ShapeError("train: feature and target sample counts differ");
    if (static_cast<std::size_t>(y.rows()) != opmode::kBinCount) throw ShapeError("train: targets must have 23 rows");
    if (x.cols() == 0) throw ConfigError("train: empty dataset");

    TrainResult result;
    result.split = split ? std::move(*split) : make_split(static_cast<std::size_t>(x.cols()), config.train_fraction, config.seed);
    if (result.split.train.empty() || result.split.test.empty()) throw ConfigError("train: empty train or test split");

    NetworkLayout layout;
    layout.input_dim = static_cast<std::size_t>(x.rows());
    layout.dropout = config.dropout;
    layout.activation = config.activation;
    result.params = init(layout, config.seed);

    const Eigen::MatrixXd x_test = gather(x, result.split.test);
    const Eigen::MatrixXd y_test = gather(y, result.split.test);
    std::vector<std::size_t> order = result.split.train;
    Rng rng(config.seed ^ kTrainStream);
    ForwardCache cache;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::span<const std::size_t> cols(order.data() + start, end - start);
            const Eigen::MatrixXd xb = gather(x, cols);
            const Eigen::MatrixXd yb = gather(y, cols);
            const Eigen::MatrixXd pred = forward(result.params, xb, Mode::train, &rng, &cache);
            total += loss(pred, yb, config.loss);
            ++batches;
            const Layers grads = backward(result.params, cache, yb, config.loss);
            if (!all_finite(grads))
                throw Error("non-finite gradient at epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(result.params.step + 1));
            adam_step(result.params, grads, config.adam);
        }
        result.history.train_loss.push_back(total / static_cast<double>(batches));
        result.history.test_loss.push_back(loss(predict(result.params, x_test), y_test, config.loss));
    }
    return result;
}

Eigen::MatrixXd predict(const ModelParameters& params, const Eigen::MatrixXd& x) {
    return forward(params, x, Mode::eval);
}

opmode::OpModeDistribution predict_one(const ModelParameters& params, std::span<const double> features) {
    const Eigen::MatrixXd x =
        Eigen::Map<const Eigen::VectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
    const Eigen::MatrixXd y = predict(params, x);
    opmode::OpModeDistribution d;
    for (std::size_t i = 0; i < opmode::kBinCount; ++i) d[i] = y(static_cast<Eigen::Index>(i), 0);
    d.support_seconds = 0;
    return d;
}

}  // namespace opmodenet::mnn
