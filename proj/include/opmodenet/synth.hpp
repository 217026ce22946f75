#pragma once

#include "opmodenet/emissions.hpp"
#include "opmodenet/features.hpp"
#include "opmodenet/opmode.hpp"
#include "opmodenet/rng.hpp"
#include "opmodenet/roadnet.hpp"
#include "opmodenet/traffic.hpp"
#include "opmodenet/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace opmodenet::synth {

/// Free-flow regime for one road type.
struct RoadRegime {
    double speed_limit_mph = 30.0;
    int lanes = 1;
    double aadt_mean = 8000.0;
    std::string functional_class = "5";
};

struct GridSpec {
    std::size_t rows = 5;
    std::size_t cols = 5;
    double spacing_m = 200.0;
    geo::LatLon origin{42.3601, -71.0589};
    std::size_t towns_x = 2;  ///< towns tile the grid in a towns_x by towns_y layout
    std::size_t towns_y = 2;
    bool all_two_way = true;  ///< otherwise every fourth row is one-way eastbound
    bool mixed_road_types = true;  ///< otherwise every street is residential
};

/// Street classes cycle with the line index: 0 primary, 2 secondary, others
/// residential; every eighth line is a motorway when the grid has >= 8 lines.
std::string road_type_of_line(std::size_t line, std::size_t line_count, bool mixed);
const std::map<std::string, RoadRegime>& default_regimes();

/// One way per grid edge. Rows are named "Row r", columns "Col c".
roadnet::NetworkExtract grid_network(const GridSpec& spec);

/// The 50-node / 62-way reference extract: a 5 by 10 grid whose rows are
/// stitched from multi-edge ways.
roadnet::NetworkExtract reference_network();

// ---------------------------------------------------------------------------
// Traces with an answer key

struct TraceSpec {
    std::size_t count = 50;
    double noise_m = 10.0;
    double min_interval_s = 1.0;
    double max_interval_s = 5.0;
    double duration_s = 300.0;
    double start_epoch_s = 1714550400.0;  ///< 2024-05-01T08:00:00Z
    double start_spread_s = 3600.0;       ///< trace starts spread uniformly over this span
    double stop_probability = 0.3;        ///< chance of a full stop at a link end
};

struct TrueSecond {
    double t = 0.0;
    roadnet::LinkId link;
    double position_m = 0.0;  ///< along the route
    double speed_mps = 0.0;
    double accel_mps2 = 0.0;
};

struct SyntheticTrace {
    trajectory::RawTrace raw;
    std::vector<roadnet::LinkId> point_links;  ///< true link per GPS point
    std::vector<roadnet::LinkId> route;
    std::vector<TrueSecond> seconds;           ///< true motion on integer seconds
};

/// Random-walk routes (no U-turns where avoidable) driven by a simple
/// kinematic model, sampled at irregular intervals with Gaussian noise.
std::vector<SyntheticTrace> generate_traces(std::span<const roadnet::RoadLink> links, const TraceSpec& spec, Rng& rng);

/// Per-link opmode distributions of the true motion.
std::map<std::uint32_t, opmode::OpModeDistribution> true_distributions(std::span<const SyntheticTrace> traces,
                                                                       std::span<const roadnet::RoadLink> links,
                                                                       const opmode::BinTable& table,
                                                                       const opmode::VspCoefficients& coeffs);

// ---------------------------------------------------------------------------
// Feature-conditioned targets

/// Softmax of a fixed random linear map of (speed, speed^2, grade, road-type
/// one-hot), plus a speed-class affinity so that slow links favor the low
/// speed bins.
struct TargetModel {
    std::vector<std::string> road_types;
    std::vector<std::array<double, 3 + 8>> weights;  ///< per bin: speed, speed^2, grade, road types
    double affinity = 1.0;
    double temperature = 1.0;

    static TargetModel random(Rng& rng, double scale = 1.0);
    opmode::OpModeDistribution operator()(double congested_speed_mph, double grade, const std::string& road_type) const;
};

// ---------------------------------------------------------------------------
// Other fixtures

/// Attribute inventory for the undirected links: geometry offset by
/// `offset_m`, some columns left blank to exercise imputation.
std::string attributes_csv(std::span<const roadnet::RoadLink> links, Rng& rng, double offset_m = 2.0);

/// Smooth elevation surface sampled on a regular grid covering the links.
std::string elevation_csv(std::span<const roadnet::RoadLink> links, double step_m = 50.0, double relief_m = 12.0);

/// 512-wide town vectors: low-rank structure plus small noise.
std::vector<features::TownEmbedding> embeddings(std::span<const std::string> towns, Rng& rng, std::size_t rank = 4);

/// Drive cycles for both families spanning `lo`..`hi` mph.
std::vector<opmode::DriveCycle> drive_cycles(Rng& rng, double lo_mph = 5.0, double hi_mph = 70.0, double step_mph = 5.0,
                                             std::size_t duration_s = 600);
/// Writes manifest.csv and one <id>.csv per cycle into `dir`.
void write_drive_cycles(std::span<const opmode::DriveCycle> cycles, const std::filesystem::path& dir);

/// Non-authoritative rate table with plausible shape: rates grow with speed
/// class and VSP, idle and braking are lowest.
emissions::EmissionRateTable synthetic_rates();

// ---------------------------------------------------------------------------
// Full fixture set

struct SyntheticSpec {
    GridSpec grid;
    TraceSpec traces;
    bool feature_targets = false;  ///< also write answer/targets.csv from TargetModel
    double target_scale = 1.0;
    std::uint64_t seed = 7;

    /// Throws ConfigError on empty grids or bad intervals.
    void validate() const;
};

struct FixtureSet {
    std::filesystem::path root;
    std::size_t links = 0;
    std::size_t traces = 0;
    std::vector<std::string> files;  ///< relative paths, sorted
};

/// Writes network.json, attributes.csv, elevation.csv, embeddings.csv,
/// rates.csv, cycles/, traces/*.gpx, answer/ and config.json under `root`.
FixtureSet generate(const SyntheticSpec& spec, const std::filesystem::path& root);

/// Links, grades and traffic states exactly as the pipeline derives them
/// from the generated network, attributes and elevation.
struct DerivedNetwork {
    std::vector<roadnet::RoadLink> links;
    std::map<roadnet::LinkId, traffic::LinkTrafficState> states;
};
DerivedNetwork derive_network(const roadnet::NetworkExtract& extract, std::string_view attributes,
                              std::string_view elevation, const traffic::TrafficParams& params = {});

}  // namespace opmodenet::synth
