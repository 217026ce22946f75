#pragma once

#include "opmodenet/opmode.hpp"
#include "opmodenet/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opmodenet::mnn {

enum class Activation { relu, tanh };
enum class LossKind { mse, cross_entropy };
enum class Mode { train, eval };

std::string to_string(Activation a);
std::string to_string(LossKind l);
Activation parse_activation(std::string_view s);
LossKind parse_loss(std::string_view s);

inline constexpr std::size_t kModules = 4;
/// Layer order: shared 1, shared 2, module trunks 0-3, module heads 0-3.
inline constexpr std::size_t kLayerCount = 2 + 2 * kModules;

struct NetworkLayout {
    std::size_t input_dim = 0;
    std::array<std::size_t, 2> shared{128, 64};
    std::size_t trunk = 32;
    std::array<std::size_t, kModules> heads{2, 6, 9, 6};
    Activation activation = Activation::relu;
    double dropout = 0.3;

    std::size_t output_dim() const;
    /// (rows, cols) of layer i's weight matrix.
    std::pair<std::size_t, std::size_t> layer_shape(std::size_t i) const;
    /// Throws ConfigError on zero widths, heads not summing to 23 or dropout outside [0, 1).
    void validate() const;
};

/// Weights plus biases over all layers.
std::size_t parameter_count(const NetworkLayout& layout);

struct Dense {
    Eigen::MatrixXd w;  ///< out x in
    Eigen::VectorXd b;
};

using Layers = std::array<Dense, kLayerCount>;

/// Zero-filled layers shaped by the layout.
Layers zero_layers(const NetworkLayout& layout);
std::vector<double> flatten(const Layers& layers);
void unflatten(Layers& layers, std::span<const double> values);

struct ModelParameters {
    NetworkLayout layout;
    Layers layers;
    Layers adam_m;
    Layers adam_v;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;

    std::size_t count() const { return parameter_count(layout); }
};

/// Glorot-uniform weights, zero biases and zero optimizer state.
ModelParameters init(const NetworkLayout& layout, std::uint64_t seed);

/// Activations retained for backpropagation.
struct ForwardCache {
    Eigen::MatrixXd input;
    Eigen::MatrixXd pre1, pre2;        ///< pre-activations of the shared layers
    Eigen::MatrixXd out1, out2;        ///< after activation and dropout
    Eigen::MatrixXd mask1, mask2;      ///< scaled keep masks (empty when unused)
    std::array<Eigen::MatrixXd, kModules> pre_t, out_t, mask_t;
    Eigen::MatrixXd output;            ///< softmax, one column per sample
};

/// Batched forward pass; columns of `x` are samples. Train mode draws inverted
/// dropout masks from `rng` on both shared layers and every module trunk.
Eigen::MatrixXd forward(const ModelParameters& params, const Eigen::MatrixXd& x, Mode mode, Rng* rng = nullptr,
                        ForwardCache* cache = nullptr);

/// Mean over samples of the per-sample loss. MSE averages squared error over
/// the output components; cross-entropy is -sum target * log(pred).
double loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, LossKind kind = LossKind::mse);
double loss(const opmode::OpModeDistribution& pred, const opmode::OpModeDistribution& target);

/// Exact gradients of the batch loss with respect to every parameter.
Layers backward(const ModelParameters& params, const ForwardCache& cache, const Eigen::MatrixXd& target,
                LossKind kind = LossKind::mse);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One bias-corrected Adam update; increments the step counter.
void adam_step(ModelParameters& params, const Layers& gradients, const AdamConfig& config = {});

struct TrainConfig {
    AdamConfig adam;
    std::size_t batch_size = 32;
    std::size_t epochs = 1000;
    double dropout = 0.3;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    bool shuffle = true;
    LossKind loss = LossKind::mse;
    Activation activation = Activation::relu;

    void validate() const;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1; the first round(n * fraction) indices train.
Split make_split(std::size_t n, double train_fraction, std::uint64_t seed);

struct TrainHistory {
    std::vector<double> train_loss;  ///< mean minibatch loss per epoch
    std::vector<double> test_loss;   ///< eval-mode loss on the held-out set per epoch
};

struct TrainResult {
    ModelParameters params;
    TrainHistory history;
    Split split;
};

/// Trains on columns of `x` (features) and `y` (23-row targets). Without an
/// explicit split the seeded 80:20 split of make_split is used.
TrainResult train(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const TrainConfig& config,
                  std::optional<Split> split = std::nullopt);

/// Eval-mode outputs, one column per sample.
Eigen::MatrixXd predict(const ModelParameters& params, const Eigen::MatrixXd& x);
opmode::OpModeDistribution predict_one(const ModelParameters& params, std::span<const double> features);

struct ModelFile {
    ModelParameters params;
    TrainConfig config;
    std::string encoder_hash;
    TrainHistory history;
};

std::string model_to_json(const ModelFile& model);
/// Parses a model file. When `expected_encoder_hash` is given and differs
/// from the recorded hash, throws ValidationError.
ModelFile model_from_json(std::string_view json, std::optional<std::string> expected_encoder_hash = std::nullopt);

}  // namespace opmodenet::mnn
