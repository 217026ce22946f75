#pragma once

#include "opmodenet/emissions.hpp"
#include "opmodenet/opmode.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace opmodenet::eval {

struct Metrics {
    std::size_t n = 0;
    double rmse = 0.0;
    std::optional<double> r2;    ///< empty when the truth has zero variance
    std::optional<double> mape;  ///< percent; empty when every truth is near zero
    std::size_t mape_excluded = 0;
};

inline constexpr double kMapeEpsilon = 1e-9;

/// RMSE, R^2 and MAPE (over |truth| > 1e-9). Needs equal lengths >= 2.
Metrics metrics(std::span<const double> pred, std::span<const double> truth);

/// (baseline - model) / baseline, empty when the baseline is zero.
std::optional<double> improvement(double baseline, double model);

struct BinComparison {
    int bin_id = 0;
    Metrics model;
    Metrics baseline;
    std::optional<double> rmse_improvement;
};

struct PollutantComparison {
    std::string pollutant;
    Metrics model;
    Metrics baseline;
    std::optional<double> rmse_improvement;
    std::optional<double> mape_improvement;
};

using Distributions = std::map<std::uint32_t, opmode::OpModeDistribution>;
using Emissions = std::map<std::uint32_t, emissions::LinkEmissions>;

/// Per-bin model-vs-truth and baseline-vs-truth metrics. The three maps must
/// hold the same links; otherwise ValidationError lists the symmetric difference.
std::vector<BinComparison> per_bin_report(const Distributions& model, const Distributions& baseline,
                                          const Distributions& truth);

std::vector<PollutantComparison> per_pollutant_report(const Emissions& model, const Emissions& baseline,
                                                      const Emissions& truth);

struct ComparisonReport {
    std::size_t links = 0;
    std::vector<BinComparison> bins;
    std::vector<PollutantComparison> pollutants;
};

std::string report_to_json(const ComparisonReport& report);

/// link_id, bin_id, truth, model, baseline
std::string bin_scatter_csv(const Distributions& model, const Distributions& baseline, const Distributions& truth);
/// link_id, pollutant, truth, model, baseline
std::string pollutant_scatter_csv(const Emissions& model, const Emissions& baseline, const Emissions& truth);
/// pollutant, model_mape, baseline_mape
std::string mape_bars_csv(std::span<const PollutantComparison> rows);
/// bin_id, model_rmse, baseline_rmse, model_r2, baseline_r2, rmse_improvement
std::string bin_rmse_csv(std::span<const BinComparison> rows);

}  // namespace opmodenet::eval
