#pragma once

#include "opmodenet/errors.hpp"
#include "opmodenet/features.hpp"
#include "opmodenet/mnn.hpp"
#include "opmodenet/opmode.hpp"
#include "opmodenet/roadnet.hpp"
#include "opmodenet/traffic.hpp"
#include "opmodenet/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace opmodenet::pipeline {

namespace fs = std::filesystem;

/// An upstream stage has not produced its outputs yet.
class MissingArtifact : public Error {
public:
    using Error::Error;
};

/// 0 success, 1 unexpected failure, 2 config, 3 missing dependency, 4 data validation.
int exit_code_for(const std::exception& e);

struct Paths {
    fs::path network;
    fs::path traces;  ///< directory of *.gpx files
    fs::path elevation;
    fs::path attributes;
    fs::path embeddings;
    fs::path rates;
    fs::path cycles;  ///< drive-cycle manifest
    fs::path bin_table;  ///< empty: bundled table
    fs::path truth_distributions;  ///< used when ground_truth.source is "file"
    fs::path encoder;  ///< used when features.encoder is "reuse"
    fs::path output_dir;
};

struct PipelineConfig {
    nlohmann::json effective;  ///< defaults merged with the file and the overrides; paths as written
    fs::path base_dir;         ///< relative paths resolve against this
    Paths paths;
    std::uint64_t seed = 0;

    roadnet::JoinParams join;
    double elevation_snap_m = 500.0;
    traffic::TrafficParams traffic;
    traffic::InventoryDefaults inventory;
    trajectory::TrajectoryParams trajectory;
    double utc_offset_hours = 0.0;
    std::vector<trajectory::TimeWindow> windows;
    std::string truth_source = "traces";
    std::string window = "all";
    trajectory::CoverageFilter coverage;
    opmode::VspCoefficients vsp;
    features::EncoderOptions encoder;
    std::string encoder_mode = "fit";
    mnn::TrainConfig training;
    std::string grouping = "town";
    std::map<std::string, std::string> regions;
};

/// Defaults for every key; "seed" is null and must be supplied.
nlohmann::json default_config();

/// Builds a config from a JSON document. Unknown keys, a missing seed, bad
/// values and referenced paths that do not exist raise ConfigError.
PipelineConfig config_from_json(const nlohmann::json& document, const fs::path& base_dir);

/// Reads `file` and applies "dotted.key=value" overrides; values parse as
/// JSON when they can and as strings otherwise.
PipelineConfig load_config(const fs::path& file, const std::vector<std::string>& overrides = {});

enum class Stage {
    build_network,
    derive_traffic,
    process_traces,
    ground_truth,
    featurize,
    train,
    predict,
    baseline,
    emissions,
    evaluate,
};

const std::vector<Stage>& all_stages();
std::string to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view name);
fs::path stage_dir(const PipelineConfig& config, Stage s);

struct RunOptions {
    bool force = false;
    std::size_t jobs = 1;
    std::ostream* log = nullptr;
};

struct StageResult {
    Stage stage;
    bool skipped = false;  ///< manifest up to date
    std::string summary;
};

/// Runs one stage. The stage is skipped when its manifest matches the current
/// inputs and config; a changed config is refused unless `force` is set.
StageResult run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options = {});

/// All stages in dependency order.
std::vector<StageResult> run_all(const PipelineConfig& config, const RunOptions& options = {});

}  // namespace opmodenet::pipeline
