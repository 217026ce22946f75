#pragma once

#include "opmodenet/roadnet.hpp"
#include "opmodenet/traffic.hpp"

#include <Eigen/Dense>

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opmodenet::features {

inline constexpr std::size_t kEmbeddingDim = 512;

struct TownEmbedding {
    std::string town_id;
    std::vector<double> values;  ///< exactly kEmbeddingDim entries
};

/// Columns town_id, v0 .. v511.
std::vector<TownEmbedding> read_embeddings_csv(std::string_view csv);
std::string write_embeddings_csv(std::span<const TownEmbedding> rows);

// ---------------------------------------------------------------------------
// Imputation

struct ImputationStats {
    std::map<std::string, double> speed_limit_by_road_type;
    double global_speed_limit = 0.0;
};

struct ImputeReport {
    std::size_t one_way = 0;
    std::size_t speed_limit = 0;
    std::size_t speed_limit_global = 0;  ///< road type without observed limits

    ImputeReport& operator+=(const ImputeReport& o);
};

/// Mean observed speed limit per road type, from training links only.
ImputationStats fit_imputation(std::span<const roadnet::RoadLink> links);

/// Fills a missing one-way flag from edge directionality and a missing speed
/// limit from the road type's mean limit (global mean as fallback).
roadnet::RoadLink impute(const roadnet::RoadLink& link, const ImputationStats& stats, ImputeReport* report = nullptr);

// ---------------------------------------------------------------------------
// PCA

struct Pca {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;           ///< k x d, orthonormal rows
    std::vector<double> explained_variance;  ///< all eigenvalues, descending
    double variance_target = 0.95;

    std::size_t k() const { return static_cast<std::size_t>(components.rows()); }
    Eigen::VectorXd project(const Eigen::VectorXd& x) const { return components * (x - mean); }
    /// Cumulative explained-variance ratios, one per eigenvalue.
    std::vector<double> cumulative_ratio() const;
};

/// PCA of the rows of `samples` through an SVD of the centered matrix. k is
/// the smallest count reaching `variance_target` of the total variance.
Pca fit_pca(const Eigen::MatrixXd& samples, double variance_target);

// ---------------------------------------------------------------------------
// Encoder

/// Names of the numeric block in order.
const std::vector<std::string>& numeric_feature_names();
/// Categorical fields in order.
const std::vector<std::string>& categorical_feature_names();

/// Raw numeric block for a link; missing values are empty.
std::array<std::optional<double>, 9> raw_numeric(const roadnet::RoadLink& link, const traffic::LinkTrafficState& state);
/// Raw categorical value for one field ("road_type", "one_way", "urban_type", "functional_class").
std::string raw_categorical(const roadnet::RoadLink& link, std::string_view field);

struct EncoderOptions {
    double variance_target = 0.95;
    bool imagery = true;
};

struct FittedEncoder {
    ImputationStats imputation;
    std::vector<std::string> numeric;     ///< kept numeric columns
    std::vector<double> mean;             ///< per kept column
    std::vector<double> stddev;           ///< per kept column
    std::vector<std::string> dropped;     ///< constant numeric columns
    std::map<std::string, double> fill;   ///< training mean for missing numeric values
    std::vector<std::pair<std::string, std::vector<std::string>>> vocab;  ///< per field, sorted; "other" slot implied
    std::optional<Pca> pca;
    std::vector<std::string> pca_towns;   ///< towns the PCA was fitted on

    std::size_t dim() const;
    /// Output column names in order.
    std::vector<std::string> columns() const;
};

/// Fits imputation, standardization, vocabularies and the imagery PCA on the
/// training links. PCA uses the embeddings of towns present in the training
/// links.
FittedEncoder fit_encoder(std::span<const roadnet::RoadLink> links, std::span<const traffic::LinkTrafficState> states,
                          std::span<const TownEmbedding> embeddings, const EncoderOptions& options = {});

struct EncodeReport {
    ImputeReport imputed;
    std::size_t missing_embedding = 0;
    std::size_t out_of_vocabulary = 0;
};

/// Feature vector of one link. A missing embedding encodes as the PCA mean.
std::vector<double> encode(const roadnet::RoadLink& link, const traffic::LinkTrafficState& state,
                           const TownEmbedding* embedding, const FittedEncoder& encoder, EncodeReport* report = nullptr);

std::string encoder_to_json(const FittedEncoder& encoder);
FittedEncoder encoder_from_json(std::string_view json);
/// SHA-256 of the canonical JSON form.
std::string encoder_hash(const FittedEncoder& encoder);

}  // namespace opmodenet::features
