#include "opmodenet/io.hpp"
#include "opmodenet/pipeline.hpp"

#include <algorithm>

namespace opmodenet::pipeline {

using nlohmann::json;

namespace {

const char* const kPathKeys[] = {"network",    "traces", "elevation", "attributes",          "embeddings", "rates",
                                 "cycles",     "bin_table", "encoder", "truth_distributions", "output_dir"};

void merge_into(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        auto& slot = base[key];
        // Free-form maps and lists are replaced wholesale.
        if (slot.is_object() && path != "emissions.regions" && path != "traffic.capacity_defaults.per_lane_by_class" &&
            path != "traffic.capacity_defaults.free_flow_speed_by_road_type")
            merge_into(slot, value, path);
        else
            slot = value;
    }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
    const std::string name = std::string(section) + "." + key;
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + name + "' has the wrong type");
    }
}

void set_dotted(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
}

}  // namespace

json default_config() {
    const auto vsp = opmode::VspCoefficients::light_duty();
    const mnn::TrainConfig t;
    json j;
    j["seed"] = nullptr;
    j["paths"] = json::object();
    for (const char* k : kPathKeys) j["paths"][k] = "";
    j["paths"]["output_dir"] = "out";
    j["join"] = {{"gate_m", 25.0}, {"name_weight", 0.3}};
    j["elevation"] = {{"max_snap_m", 500.0}};
    const traffic::InventoryDefaults inv;
    j["traffic"] = {{"K", 0.09}, {"D", 0.55}, {"alpha", 0.15}, {"beta", 4.0}};
    j["traffic"]["capacity_defaults"] = {{"per_lane_by_class", inv.capacity_per_lane_by_class},
                                         {"per_lane_fallback", inv.capacity_per_lane_fallback},
                                         {"free_flow_speed_by_road_type", inv.free_flow_speed_by_road_type},
                                         {"free_flow_speed_fallback", inv.free_flow_speed_fallback}};
    j["trajectory"] = {{"max_gap_s", 180.0},      {"bandwidth_s", 11.0},
                       {"bandwidth_points", 7},   {"sigma_m", 10.0},
                       {"lambda_m", 20.0},        {"radius_m", 50.0},
                       {"reverse_tolerance_m", 50.0}, {"u_turn_penalty", 5.0},
                       {"max_detour_m", 2000.0},
                       {"max_unmatched_fraction", 0.5}, {"max_speed_mph", 100.0},
                       {"utc_offset_hours", 0.0}};
    j["windows"] = json::array({{{"name", "am_7_9"}, {"start_hour", 7}, {"end_hour", 9}},
                                {{"name", "am_9_11"}, {"start_hour", 9}, {"end_hour", 11}},
                                {{"name", "pm_16_18"}, {"start_hour", 16}, {"end_hour", 18}},
                                {{"name", "pm_18_20"}, {"start_hour", 18}, {"end_hour", 20}},
                                {{"name", "pm_20_22"}, {"start_hour", 20}, {"end_hour", 22}}});
    j["ground_truth"] = {{"source", "traces"}, {"window", "all"}, {"min_length_m", 50.0}, {"min_seconds", 120.0}};
    j["vsp"] = {{"a", vsp.a}, {"b", vsp.b}, {"c", vsp.c}, {"mass", vsp.mass}, {"g", vsp.g}};
    j["features"] = {{"variance_target", 0.95}, {"imagery", true}, {"encoder", "fit"}};
    j["training"] = {{"epochs", t.epochs},
                     {"batch_size", t.batch_size},
                     {"learning_rate", t.adam.learning_rate},
                     {"beta1", t.adam.beta1},
                     {"beta2", t.adam.beta2},
                     {"epsilon", t.adam.epsilon},
                     {"dropout", t.dropout},
                     {"train_fraction", t.train_fraction},
                     {"shuffle", t.shuffle},
                     {"loss", mnn::to_string(t.loss)},
                     {"activation", mnn::to_string(t.activation)}};
    j["emissions"] = {{"grouping", "town"}, {"regions", json::object()}};
    return j;
}

PipelineConfig config_from_json(const json& document, const fs::path& base_dir) {
    json eff = default_config();
    merge_into(eff, document, "");

    PipelineConfig c;
    c.effective = eff;
    c.base_dir = base_dir;
    if (eff["seed"].is_null()) throw ConfigError("config key 'seed' is required");
    if (!eff["seed"].is_number_unsigned() && !(eff["seed"].is_number_integer() && eff["seed"].get<long long>() >= 0))
        throw ConfigError("config key 'seed' must be a non-negative integer");
    c.seed = eff["seed"].get<std::uint64_t>();

    std::vector<std::string> missing;
    auto path = [&](const char* key) {
        const auto text = get<std::string>(eff, "paths", key);
        if (text.empty()) return fs::path{};
        fs::path p(text);
        if (p.is_relative()) p = base_dir / p;
        if (std::string_view(key) != "output_dir" && !fs::exists(p)) missing.push_back(std::string(key) + "=" + p.string());
        return p.lexically_normal();
    };
    c.paths.network = path("network");
    c.paths.traces = path("traces");
    c.paths.elevation = path("elevation");
    c.paths.attributes = path("attributes");
    c.paths.embeddings = path("embeddings");
    c.paths.rates = path("rates");
    c.paths.cycles = path("cycles");
    c.paths.bin_table = path("bin_table");
    c.paths.truth_distributions = path("truth_distributions");
    c.paths.encoder = path("encoder");
    c.paths.output_dir = path("output_dir");
    if (c.paths.output_dir.empty()) throw ConfigError("config key 'paths.output_dir' must not be empty");
    if (!missing.empty()) {
        std::string msg = "config references paths that do not exist:";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }

    c.join.gate_m = get<double>(eff, "join", "gate_m");
    c.join.name_weight = get<double>(eff, "join", "name_weight");
    if (!(c.join.gate_m > 0.0) || c.join.name_weight < 0.0 || c.join.name_weight > 1.0)
        throw ConfigError("join needs gate_m > 0 and name_weight in [0, 1]");
    c.elevation_snap_m = get<double>(eff, "elevation", "max_snap_m");
    if (!(c.elevation_snap_m > 0.0)) throw ConfigError("elevation.max_snap_m must be > 0");

    c.traffic.k = get<double>(eff, "traffic", "K");
    c.traffic.d = get<double>(eff, "traffic", "D");
    c.traffic.alpha = get<double>(eff, "traffic", "alpha");
    c.traffic.beta = get<double>(eff, "traffic", "beta");
    c.traffic.validate();
    try {
        const auto& cd = eff["traffic"]["capacity_defaults"];
        c.inventory.capacity_per_lane_by_class = cd.at("per_lane_by_class").get<std::map<std::string, double>>();
        c.inventory.capacity_per_lane_fallback = cd.at("per_lane_fallback").get<double>();
        c.inventory.free_flow_speed_by_road_type =
            cd.at("free_flow_speed_by_road_type").get<std::map<std::string, double>>();
        c.inventory.free_flow_speed_fallback = cd.at("free_flow_speed_fallback").get<double>();
    } catch (const json::exception&) {
        throw ConfigError("traffic.capacity_defaults needs numeric per-class capacities and free-flow speeds");
    }
    auto positive = [](const auto& m) {
        return std::all_of(m.begin(), m.end(), [](const auto& kv) { return kv.second > 0.0; });
    };
    if (!positive(c.inventory.capacity_per_lane_by_class) || !(c.inventory.capacity_per_lane_fallback > 0.0) ||
        !positive(c.inventory.free_flow_speed_by_road_type) || !(c.inventory.free_flow_speed_fallback > 0.0))
        throw ConfigError("traffic.capacity_defaults values must be > 0");

    auto& tp = c.trajectory;
    tp.max_gap_s = get<double>(eff, "trajectory", "max_gap_s");
    tp.smooth.bandwidth_s = get<double>(eff, "trajectory", "bandwidth_s");
    tp.smooth.bandwidth_points = get<std::size_t>(eff, "trajectory", "bandwidth_points");
    tp.match.sigma_m = get<double>(eff, "trajectory", "sigma_m");
    tp.match.lambda_m = get<double>(eff, "trajectory", "lambda_m");
    tp.match.radius_m = get<double>(eff, "trajectory", "radius_m");
    tp.match.reverse_tolerance_m = get<double>(eff, "trajectory", "reverse_tolerance_m");
    tp.match.u_turn_penalty = get<double>(eff, "trajectory", "u_turn_penalty");
    tp.match.max_detour_m = get<double>(eff, "trajectory", "max_detour_m");
    tp.match.max_unmatched_fraction = get<double>(eff, "trajectory", "max_unmatched_fraction");
    tp.max_speed_mph = get<double>(eff, "trajectory", "max_speed_mph");
    c.utc_offset_hours = get<double>(eff, "trajectory", "utc_offset_hours");
    if (!(tp.max_gap_s > 0.0) || !(tp.smooth.bandwidth_s > 0.0) || tp.smooth.bandwidth_points < 3 ||
        !(tp.match.sigma_m > 0.0) || !(tp.match.lambda_m > 0.0) || !(tp.match.radius_m > 0.0) ||
        !(tp.max_speed_mph > 0.0))
        throw ConfigError("trajectory parameters must be positive (bandwidth_points >= 3)");

    if (!eff["windows"].is_array() || eff["windows"].empty()) throw ConfigError("windows must be a non-empty list");
    for (const auto& w : eff["windows"]) {
        try {
            trajectory::TimeWindow tw{w.at("name").get<std::string>(), w.at("start_hour").get<double>(),
                                      w.at("end_hour").get<double>()};
            if (tw.name.empty() || tw.start_hour < 0.0 || tw.end_hour > 24.0 || !(tw.start_hour < tw.end_hour))
                throw ConfigError("window '" + tw.name + "' needs a name and 0 <= start < end <= 24");
            c.windows.push_back(tw);
        } catch (const json::exception&) {
            throw ConfigError("each window needs name, start_hour and end_hour");
        }
    }

    c.truth_source = get<std::string>(eff, "ground_truth", "source");
    if (c.truth_source != "traces" && c.truth_source != "file")
        throw ConfigError("ground_truth.source must be 'traces' or 'file'");
    if (c.truth_source == "file" && c.paths.truth_distributions.empty())
        throw ConfigError("ground_truth.source 'file' needs paths.truth_distributions");
    c.window = get<std::string>(eff, "ground_truth", "window");
    if (c.window != "all" && c.window != "*" &&
        std::none_of(c.windows.begin(), c.windows.end(), [&](const auto& w) { return w.name == c.window; }))
        throw ConfigError("ground_truth.window '" + c.window + "' is not a configured window, 'all' or '*'");
    c.coverage.min_length_m = get<double>(eff, "ground_truth", "min_length_m");
    c.coverage.min_seconds = get<double>(eff, "ground_truth", "min_seconds");

    c.vsp.a = get<double>(eff, "vsp", "a");
    c.vsp.b = get<double>(eff, "vsp", "b");
    c.vsp.c = get<double>(eff, "vsp", "c");
    c.vsp.mass = get<double>(eff, "vsp", "mass");
    c.vsp.g = get<double>(eff, "vsp", "g");
    c.vsp.validate();

    c.encoder.variance_target = get<double>(eff, "features", "variance_target");
    c.encoder.imagery = get<bool>(eff, "features", "imagery");
    c.encoder_mode = get<std::string>(eff, "features", "encoder");
    if (!(c.encoder.variance_target > 0.0 && c.encoder.variance_target <= 1.0))
        throw ConfigError("features.variance_target must be in (0, 1]");
    if (c.encoder_mode != "fit" && c.encoder_mode != "reuse") throw ConfigError("features.encoder must be 'fit' or 'reuse'");
    if (c.encoder_mode == "reuse" && c.paths.encoder.empty())
        throw ConfigError("features.encoder 'reuse' needs paths.encoder");
    if (c.encoder.imagery && c.paths.embeddings.empty())
        throw ConfigError("features.imagery needs paths.embeddings (or set features.imagery=false)");

    auto& t = c.training;
    t.epochs = get<std::size_t>(eff, "training", "epochs");
    t.batch_size = get<std::size_t>(eff, "training", "batch_size");
    t.adam.learning_rate = get<double>(eff, "training", "learning_rate");
    t.adam.beta1 = get<double>(eff, "training", "beta1");
    t.adam.beta2 = get<double>(eff, "training", "beta2");
    t.adam.epsilon = get<double>(eff, "training", "epsilon");
    t.dropout = get<double>(eff, "training", "dropout");
    t.train_fraction = get<double>(eff, "training", "train_fraction");
    t.shuffle = get<bool>(eff, "training", "shuffle");
    t.loss = mnn::parse_loss(get<std::string>(eff, "training", "loss"));
    t.activation = mnn::parse_activation(get<std::string>(eff, "training", "activation"));
    t.seed = c.seed;
    t.validate();

    c.grouping = get<std::string>(eff, "emissions", "grouping");
    if (c.grouping != "town" && c.grouping != "region") throw ConfigError("emissions.grouping must be 'town' or 'region'");
    try {
        c.regions = eff["emissions"]["regions"].get<std::map<std::string, std::string>>();
    } catch (const json::exception&) {
        throw ConfigError("emissions.regions must map town names to region names");
    }
    return c;
}

PipelineConfig load_config(const fs::path& file, const std::vector<std::string>& overrides) {
    if (!fs::exists(file)) throw ConfigError("config file not found: " + file.string());
    json doc;
    try {
        doc = json::parse(io::read_file(file));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
    }
    json eff = default_config();
    merge_into(eff, doc, "");
    for (const auto& o : overrides) set_dotted(eff, o);
    return config_from_json(eff, fs::absolute(file).parent_path());
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const MissingArtifact*>(&e)) return 3;
    if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
        dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const DomainError*>(&e))
        return 4;
    return 1;
}

}  // namespace opmodenet::pipeline
