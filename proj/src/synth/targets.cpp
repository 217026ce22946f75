#include "opmodenet/synth.hpp"

#include <algorithm>
#include <cmath>

namespace opmodenet::synth {

namespace {

const std::vector<std::string>& target_road_types() {
    static const std::vector<std::string> t = {"motorway", "trunk",       "primary",      "secondary",
                                               "tertiary", "residential", "unclassified", "other"};
    return t;
}

/// Typical speed of the bins' speed class, mph; braking has none.
double class_center(int bin_id) {
    if (bin_id == 1) return 0.0;
    if (bin_id < 20) return 12.0;
    if (bin_id < 31) return 37.0;
    return 60.0;
}

}  // namespace

TargetModel TargetModel::random(Rng& rng, double scale) {
    TargetModel m;
    m.road_types = target_road_types();
    m.weights.resize(opmode::kBinCount);
    for (auto& w : m.weights)
        for (auto& x : w) x = scale * rng.normal();
    return m;
}

opmode::OpModeDistribution TargetModel::operator()(double speed_mph, double grade, const std::string& road_type) const {
    const double x1 = (speed_mph - 30.0) / 15.0;
    std::array<double, 3 + 8> x{};
    x[0] = x1;
    x[1] = x1 * x1;
    x[2] = grade * 20.0;
    auto it = std::find(road_types.begin(), road_types.end(), road_type);
    const auto slot = it == road_types.end() ? road_types.size() - 1 : static_cast<std::size_t>(it - road_types.begin());
    x[3 + std::min<std::size_t>(slot, 7)] = 1.0;

    std::array<double, opmode::kBinCount> logits{};
    for (std::size_t b = 0; b < opmode::kBinCount; ++b) {
        double z = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) z += weights[b][j] * x[j];
        const int id = opmode::kBinIds[b];
        if (id != 0) {
            const double d = (speed_mph - class_center(id)) / 15.0;
            z -= affinity * d * d;
        }
        logits[b] = z / temperature;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    opmode::OpModeDistribution out;
    double sum = 0.0;
    for (std::size_t b = 0; b < opmode::kBinCount; ++b) sum += out.fractions[b] = std::exp(logits[b] - mx);
    for (auto& f : out.fractions) f /= sum;
    return out;
}

}  // namespace opmodenet::synth
