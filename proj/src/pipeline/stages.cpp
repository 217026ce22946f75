#include "bin_table_data.hpp"

#include "opmodenet/emissions.hpp"
#include "opmodenet/eval.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>

namespace opmodenet::pipeline {

using nlohmann::json;
using Distributions = std::map<std::uint32_t, opmode::OpModeDistribution>;

namespace {

constexpr const char* kManifestFormat = "opmodenet-manifest";
constexpr int kManifestVersion = 1;

struct StageInfo {
    Stage stage;
    const char* name;
};

constexpr StageInfo kStages[] = {
    {Stage::build_network, "build-network"}, {Stage::derive_traffic, "derive-traffic"},
    {Stage::process_traces, "process-traces"}, {Stage::ground_truth, "ground-truth"},
    {Stage::featurize, "featurize"},         {Stage::train, "train"},
    {Stage::predict, "predict"},             {Stage::baseline, "baseline"},
    {Stage::emissions, "emissions"},         {Stage::evaluate, "evaluate"},
};

/// Config sections that influence each stage; everything else is ignored by
/// its config hash so unrelated edits do not invalidate it.
json stage_config(Stage s, const PipelineConfig& c) {
    const auto& e = c.effective;
    switch (s) {
        case Stage::build_network: return {{"join", e["join"]}, {"elevation", e["elevation"]}};
        case Stage::derive_traffic: return {{"traffic", e["traffic"]}};
        case Stage::process_traces: return {{"trajectory", e["trajectory"]}};
        case Stage::ground_truth:
            return {{"ground_truth", e["ground_truth"]},
                    {"windows", e["windows"]},
                    {"vsp", e["vsp"]},
                    {"utc_offset_hours", e["trajectory"]["utc_offset_hours"]}};
        case Stage::featurize:
            return {{"features", e["features"]}, {"train_fraction", e["training"]["train_fraction"]}, {"seed", e["seed"]}};
        case Stage::train: return {{"training", e["training"]}, {"seed", e["seed"]}};
        case Stage::predict: return json::object();
        case Stage::baseline: return {{"vsp", e["vsp"]}};
        case Stage::emissions: return {{"emissions", e["emissions"]}};
        case Stage::evaluate: return json::object();
    }
    return json::object();
}

/// Files a stage reads, keyed by a location-independent logical name.
using Inputs = std::map<std::string, fs::path>;
/// Files a stage writes, by file name inside the stage directory.
using Outputs = std::map<std::string, std::string>;

void log(const RunOptions& o, const std::string& line) {
    if (o.log) *o.log << line << "\n";
}

fs::path upstream(const PipelineConfig& c, Stage producer, const std::string& file) {
    const fs::path dir = stage_dir(c, producer);
    if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / file))
        throw MissingArtifact(to_string(producer) + " output missing (" + (dir / file).string() + "); run '" +
                              to_string(producer) + "' first");
    return dir / file;
}

const fs::path& required(const fs::path& p, const char* key) {
    if (p.empty()) throw ConfigError("config key 'paths." + std::string(key) + "' is required by this stage");
    return p;
}

void add_directory(Inputs& in, const std::string& prefix, const fs::path& dir, const std::string& extension) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == extension) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) in[prefix + "/" + f.filename().string()] = f;
}

opmode::BinTable bin_table(const PipelineConfig& c) {
    if (c.paths.bin_table.empty()) return opmode::BinTable::standard();
    return opmode::BinTable::parse_csv(io::read_file(c.paths.bin_table));
}

void add_bin_table(Inputs& in, const PipelineConfig& c) {
    if (!c.paths.bin_table.empty()) in["bin_table"] = c.paths.bin_table;
}

std::string summary_json(const json& j) { return j.dump(1) + "\n"; }

// ---------------------------------------------------------------------------
// Feature table

struct FeatureTable {
    std::vector<std::string> columns;
    std::vector<std::uint32_t> ids;
    std::vector<std::string> split;
    std::vector<std::vector<double>> rows;

    std::size_t index_of(std::uint32_t id) const {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        if (it == ids.end() || *it != id) throw ValidationError("feature table has no link", {std::to_string(id)});
        return static_cast<std::size_t>(it - ids.begin());
    }
};

FeatureTable read_features(std::string_view csv) {
    const auto t = io::parse_csv(csv);
    const auto c_id = t.require("link_id");
    const auto c_split = t.require("split");
    FeatureTable f;
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (i != c_id && i != c_split) f.columns.push_back(t.header[i]);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "features line " + std::to_string(t.row_lines[r]);
        f.ids.push_back(static_cast<std::uint32_t>(io::parse_int(row[c_id], where)));
        f.split.push_back(io::trim(row[c_split]));
        std::vector<double> v;
        for (std::size_t i = 0; i < row.size(); ++i)
            if (i != c_id && i != c_split) v.push_back(io::parse_double(row[i], where));
        f.rows.push_back(std::move(v));
    }
    if (!std::is_sorted(f.ids.begin(), f.ids.end())) throw ValidationError("feature table must be sorted by link_id");
    return f;
}

Eigen::MatrixXd columns_of(const FeatureTable& f, std::span<const std::size_t> rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(f.columns.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j)
        for (std::size_t i = 0; i < f.columns.size(); ++i)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f.rows[rows[j]][i];
    return x;
}

std::set<std::uint32_t> ids_with_split(const FeatureTable& f, std::string_view which) {
    std::set<std::uint32_t> out;
    for (std::size_t i = 0; i < f.ids.size(); ++i)
        if (f.split[i] == which) out.insert(f.ids[i]);
    return out;
}

template <typename Map>
Map restrict_to(const Map& m, const std::set<std::uint32_t>& ids) {
    Map out;
    for (std::uint32_t id : ids) {
        auto it = m.find(id);
        if (it != m.end()) out.emplace(id, it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stages

Inputs inputs_of(Stage s, const PipelineConfig& c) {
    Inputs in;
    switch (s) {
        case Stage::build_network:
            in["network"] = required(c.paths.network, "network");
            if (!c.paths.attributes.empty()) in["attributes"] = c.paths.attributes;
            if (!c.paths.elevation.empty()) in["elevation"] = c.paths.elevation;
            break;
        case Stage::derive_traffic: in["links"] = upstream(c, Stage::build_network, "links.csv"); break;
        case Stage::process_traces:
            in["links"] = upstream(c, Stage::build_network, "links.csv");
            add_directory(in, "traces", required(c.paths.traces, "traces"), ".gpx");
            break;
        case Stage::ground_truth:
            in["links"] = upstream(c, Stage::build_network, "links.csv");
            add_bin_table(in, c);
            if (c.truth_source == "file")
                in["truth_distributions"] = c.paths.truth_distributions;
            else
                in["link_seconds"] = upstream(c, Stage::process_traces, "link_seconds.csv");
            break;
        case Stage::featurize:
            in["links"] = upstream(c, Stage::build_network, "links.csv");
            in["traffic"] = upstream(c, Stage::derive_traffic, "traffic.csv");
            in["distributions"] = upstream(c, Stage::ground_truth, "distributions.csv");
            if (c.encoder.imagery) in["embeddings"] = c.paths.embeddings;
            if (c.encoder_mode == "reuse") in["encoder"] = c.paths.encoder;
            break;
        case Stage::train:
            in["features"] = upstream(c, Stage::featurize, "features.csv");
            in["encoder"] = upstream(c, Stage::featurize, "encoder.json");
            in["distributions"] = upstream(c, Stage::ground_truth, "distributions.csv");
            break;
        case Stage::predict:
            in["model"] = upstream(c, Stage::train, "model.json");
            in["features"] = upstream(c, Stage::featurize, "features.csv");
            in["encoder"] = upstream(c, Stage::featurize, "encoder.json");
            break;
        case Stage::baseline: {
            in["links"] = upstream(c, Stage::build_network, "links.csv");
            in["traffic"] = upstream(c, Stage::derive_traffic, "traffic.csv");
            const auto& manifest = required(c.paths.cycles, "cycles");
            in["cycles/manifest"] = manifest;
            add_directory(in, "cycles", manifest.parent_path(), ".csv");
            add_bin_table(in, c);
            break;
        }
        case Stage::emissions:
            in["links"] = upstream(c, Stage::build_network, "links.csv");
            in["traffic"] = upstream(c, Stage::derive_traffic, "traffic.csv");
            in["predictions"] = upstream(c, Stage::predict, "predictions.csv");
            in["baseline"] = upstream(c, Stage::baseline, "baseline.csv");
            in["distributions"] = upstream(c, Stage::ground_truth, "distributions.csv");
            in["rates"] = required(c.paths.rates, "rates");
            break;
        case Stage::evaluate:
            in["features"] = upstream(c, Stage::featurize, "features.csv");
            in["distributions"] = upstream(c, Stage::ground_truth, "distributions.csv");
            in["predictions"] = upstream(c, Stage::predict, "predictions.csv");
            in["baseline"] = upstream(c, Stage::baseline, "baseline.csv");
            for (const char* f : {"model_link_emissions.csv", "baseline_link_emissions.csv", "truth_link_emissions.csv"})
                in[std::string("emissions/") + f] = upstream(c, Stage::emissions, f);
            break;
    }
    return in;
}

Outputs build_network(const PipelineConfig& c, const Inputs& in) {
    const std::string text = io::read_file(in.at("network"));
    const auto ext = io::to_lower(in.at("network").extension().string());
    const auto extract = (ext == ".osm" || ext == ".xml") ? roadnet::osm_xml_to_extract(text) : roadnet::parse_network(text);
    auto built = roadnet::build_links(extract);
    auto& links = built.links;

    json summary;
    summary["nodes"] = extract.nodes.size();
    summary["ways"] = extract.ways.size();
    summary["links"] = links.size();
    summary["dropped_zero_length"] = built.dropped_zero_length;

    io::CsvWriter report({"row", "status", "link_id", "score", "mean_distance_m", "reason"});
    if (in.count("attributes")) {
        const auto records = roadnet::parse_attribute_records(io::read_file(in.at("attributes")));
        const auto joined = roadnet::join_attributes(links, records.records, c.join);
        for (const auto& m : joined.matches) {
            report.field(m.row).field(std::string_view("matched")).field(static_cast<long long>(m.link.value));
            report.field(m.score).field(m.mean_distance_m).field(std::string_view{});
            report.end_row();
        }
        for (std::size_t row : joined.unmatched) {
            report.field(row).field(std::string_view("unmatched")).field(std::string_view{}).field(std::string_view{});
            report.field(std::string_view{}).field(std::string_view("no link within the gate"));
            report.end_row();
        }
        for (const auto& r : joined.rejected) {
            report.field(r.row).field(std::string_view("rejected")).field(std::string_view{}).field(std::string_view{});
            report.field(std::string_view{}).field(r.reason);
            report.end_row();
        }
        summary["attributes_matched"] = joined.matches.size();
        summary["attributes_unmatched"] = joined.unmatched.size();
        summary["attributes_rejected"] = joined.rejected.size() + records.rejected.size();
    }
    if (in.count("elevation")) {
        const auto grid = roadnet::CsvGridElevation::from_csv(io::read_file(in.at("elevation")), "elevation",
                                                              c.elevation_snap_m);
        summary["grades_flagged"] = roadnet::assign_grades(links, grid).flagged;
    } else {
        summary["grades_flagged"] = 0;
    }
    return {{"links.csv", roadnet::write_links_csv(links)},
            {"join_report.csv", report.str()},
            {"summary.json", summary_json(summary)}};
}

Outputs derive_traffic(const PipelineConfig& c, const Inputs& in) {
    const auto links = roadnet::read_links_csv(io::read_file(in.at("links")));
    traffic::DeriveReport report;
    const auto states = traffic::derive_all(links, c.traffic, c.inventory, &report);
    json summary = {{"links", states.size()},
                    {"capacity_imputed", report.capacity_imputed},
                    {"free_flow_imputed", report.free_flow_imputed},
                    {"speed_capped", report.speed_capped},
                    {"missing_aadt", report.missing_aadt}};
    return {{"traffic.csv", traffic::write_traffic_csv(states)}, {"summary.json", summary_json(summary)}};
}

Outputs process_traces(const PipelineConfig& c, const Inputs& in, const RunOptions& opt) {
    const trajectory::RoadNetwork net(roadnet::read_links_csv(io::read_file(in.at("links"))));
    std::vector<trajectory::TraceSegment> segments;
    std::size_t dropped = 0, skipped = 0, discarded = 0, traces = 0;
    for (const auto& [name, path] : in) {
        if (name.rfind("traces/", 0) != 0) continue;
        const auto parsed = trajectory::parse_gpx(io::read_file(path), path.stem().string());
        dropped += parsed.dropped_points;
        skipped += parsed.skipped.size();
        for (const auto& tr : parsed.traces) {
            ++traces;
            auto split = trajectory::segment_gaps(tr, c.trajectory.max_gap_s);
            discarded += split.discarded_points;
            for (auto& s : split.segments) segments.push_back(std::move(s));
        }
    }

    // Segments are independent; results are collected by index so the output
    // does not depend on the thread count.
    std::vector<trajectory::SegmentOutput> results(segments.size());
    std::vector<std::string> errors(segments.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < segments.size(); i = next++) {
            try {
                results[i] = trajectory::process_segment(segments[i], net, c.trajectory);
            } catch (const Error& e) {
                errors[i] = e.what();
            }
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, segments.size()));
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<trajectory::LinkSecondRecord> records;
    io::CsvWriter report({"segment_id", "points", "unmatched_points", "pieces", "seconds", "status"});
    std::size_t rejected = 0, over_speed = 0, fallback = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& r = results[i];
        std::string status = "ok";
        if (!errors[i].empty())
            status = "error: " + errors[i];
        else if (r.match.rejected)
            status = "rejected: " + r.match.reason;
        if (status != "ok") ++rejected;
        over_speed += r.pieces_over_speed;
        fallback += r.pieces_fallback;
        report.field(segments[i].id).field(segments[i].points.size()).field(r.match.unmatched_points);
        report.field(r.match.pieces.size()).field(r.records.size()).field(status);
        report.end_row();
        records.insert(records.end(), r.records.begin(), r.records.end());
    }
    json summary = {{"traces", traces},
                    {"tracks_skipped", skipped},
                    {"points_dropped", dropped},
                    {"points_discarded", discarded},
                    {"segments", segments.size()},
                    {"segments_rejected", rejected},
                    {"pieces_over_speed", over_speed},
                    {"pieces_fallback", fallback},
                    {"link_seconds", records.size()}};
    return {{"link_seconds.csv", trajectory::write_link_seconds_csv(records)},
            {"segments.csv", report.str()},
            {"summary.json", summary_json(summary)}};
}

Outputs ground_truth(const PipelineConfig& c, const Inputs& in) {
    const auto links = roadnet::read_links_csv(io::read_file(in.at("links")));
    std::set<std::uint32_t> known;
    for (const auto& l : links) known.insert(l.id.value);

    if (c.truth_source == "file") {
        auto dists = opmode::read_distributions_csv(io::read_file(in.at("truth_distributions")));
        std::vector<std::string> unknown;
        for (const auto& [id, _] : dists)
            if (!known.count(id)) unknown.push_back(std::to_string(id));
        if (!unknown.empty()) throw ValidationError("truth distributions reference unknown links", unknown);
        json summary = {{"source", "file"}, {"links", dists.size()}};
        return {{"distributions.csv", opmode::write_distributions_csv(dists)}, {"summary.json", summary_json(summary)}};
    }

    const auto table = bin_table(c);
    auto records = trajectory::read_link_seconds_csv(io::read_file(in.at("link_seconds")));
    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return a.segment_id != b.segment_id ? a.segment_id < b.segment_id : a.t < b.t;
    });
    auto in_window = [&](double t) {
        if (c.window == "*") return true;
        const std::string w = trajectory::window_of(t, c.windows, c.utc_offset_hours);
        return c.window == "all" ? !w.empty() : w == c.window;
    };

    // Classify each run of consecutive seconds so braking history carries
    // across link boundaries, then keep the seconds inside the window.
    std::map<std::uint32_t, std::vector<int>> bins;
    std::vector<trajectory::LinkSecondRecord> kept;
    std::size_t begin = 0;
    while (begin < records.size()) {
        std::size_t end = begin + 1;
        while (end < records.size() && records[end].segment_id == records[begin].segment_id &&
               std::abs(records[end].t - records[end - 1].t - 1.0) < 1e-6)
            ++end;
        std::vector<opmode::SecondSample> seq;
        for (std::size_t i = begin; i < end; ++i)
            seq.push_back({records[i].speed_mph, records[i].accel_mphps, records[i].grade});
        const auto classified = opmode::classify_sequence(seq, table, c.vsp);
        for (std::size_t i = begin; i < end; ++i) {
            if (!in_window(records[i].t)) continue;
            bins[records[i].link.value].push_back(classified[i - begin]);
            kept.push_back(records[i]);
        }
        begin = end;
    }

    const trajectory::RoadNetwork net(links);
    const auto cov = trajectory::coverage(kept, net, c.coverage);
    Distributions dists;
    for (const auto& row : cov)
        if (row.retained) dists[row.link.value] = opmode::distribution(bins.at(row.link.value));
    json summary = {{"source", "traces"},
                    {"window", c.window},
                    {"seconds_total", records.size()},
                    {"seconds_in_window", kept.size()},
                    {"links_observed", cov.size()},
                    {"links_retained", dists.size()}};
    return {{"distributions.csv", opmode::write_distributions_csv(dists)},
            {"coverage.csv", trajectory::write_coverage_csv(cov)},
            {"summary.json", summary_json(summary)}};
}

Outputs featurize(const PipelineConfig& c, const Inputs& in) {
    auto links = roadnet::read_links_csv(io::read_file(in.at("links")));
    std::sort(links.begin(), links.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    const auto states = traffic::read_traffic_csv(io::read_file(in.at("traffic")));
    const auto truth = opmode::read_distributions_csv(io::read_file(in.at("distributions")));
    std::vector<features::TownEmbedding> embeddings;
    if (in.count("embeddings")) embeddings = features::read_embeddings_csv(io::read_file(in.at("embeddings")));
    std::map<std::string, const features::TownEmbedding*> by_town;
    for (const auto& e : embeddings) by_town[e.town_id] = &e;

    auto state_of = [&](const roadnet::RoadLink& l) -> const traffic::LinkTrafficState& {
        auto it = states.find(l.id);
        if (it == states.end()) throw ValidationError("traffic table has no link", {std::to_string(l.id.value)});
        return it->second;
    };

    const std::vector<std::uint32_t> truth_ids = [&] {
        std::vector<std::uint32_t> v;
        for (const auto& [id, _] : truth) v.push_back(id);
        return v;
    }();
    if (truth_ids.size() < 2) throw ValidationError("ground truth covers fewer than 2 links");
    const auto split = mnn::make_split(truth_ids.size(), c.training.train_fraction, c.seed);
    std::map<std::uint32_t, std::string> role;
    for (std::size_t i : split.train) role[truth_ids[i]] = "train";
    for (std::size_t i : split.test) role[truth_ids[i]] = "test";

    features::FittedEncoder encoder;
    if (c.encoder_mode == "reuse") {
        encoder = features::encoder_from_json(io::read_file(in.at("encoder")));
    } else {
        std::vector<roadnet::RoadLink> train_links;
        std::vector<traffic::LinkTrafficState> train_states;
        for (const auto& l : links)
            if (role.count(l.id.value) && role[l.id.value] == "train") {
                train_links.push_back(l);
                train_states.push_back(state_of(l));
            }
        encoder = features::fit_encoder(train_links, train_states, embeddings, c.encoder);
    }

    std::vector<std::string> header = {"link_id", "split"};
    for (const auto& col : encoder.columns()) header.push_back(col);
    io::CsvWriter w(header);
    features::EncodeReport report;
    for (const auto& l : links) {
        auto it = by_town.find(l.town);
        const auto* emb = it == by_town.end() ? nullptr : it->second;
        const auto x = features::encode(l, state_of(l), emb, encoder, &report);
        auto r = role.find(l.id.value);
        w.field(static_cast<long long>(l.id.value)).field(r == role.end() ? std::string("none") : r->second);
        for (double v : x) w.field(v);
        w.end_row();
    }
    json summary = {{"links", links.size()},
                    {"train", split.train.size()},
                    {"test", split.test.size()},
                    {"dim", encoder.dim()},
                    {"pca_components", encoder.pca ? encoder.pca->k() : 0},
                    {"encoder", c.encoder_mode},
                    {"imputed_one_way", report.imputed.one_way},
                    {"imputed_speed_limit", report.imputed.speed_limit},
                    {"missing_embedding", report.missing_embedding},
                    {"out_of_vocabulary", report.out_of_vocabulary}};
    return {{"features.csv", w.str()}, {"encoder.json", features::encoder_to_json(encoder)},
            {"summary.json", summary_json(summary)}};
}

Outputs train(const PipelineConfig& c, const Inputs& in, const RunOptions& opt) {
    const auto table = read_features(io::read_file(in.at("features")));
    const auto encoder = features::encoder_from_json(io::read_file(in.at("encoder")));
    const auto truth = opmode::read_distributions_csv(io::read_file(in.at("distributions")));
    if (table.columns != encoder.columns()) throw ValidationError("feature columns do not match the encoder");

    std::vector<std::size_t> rows;
    mnn::Split split;
    for (const auto& [id, _] : truth) {
        const std::size_t r = table.index_of(id);
        if (table.split[r] == "train")
            split.train.push_back(rows.size());
        else if (table.split[r] == "test")
            split.test.push_back(rows.size());
        else
            throw ValidationError("ground-truth link has no split; rerun featurize", {std::to_string(id)});
        rows.push_back(r);
    }
    const Eigen::MatrixXd x = columns_of(table, rows);
    Eigen::MatrixXd y(static_cast<Eigen::Index>(opmode::kBinCount), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j)
        for (std::size_t b = 0; b < opmode::kBinCount; ++b)
            y(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = truth.at(table.ids[rows[j]])[b];

    log(opt, "  training on " + std::to_string(split.train.size()) + " links, " + std::to_string(c.training.epochs) +
                 " epochs");
    auto result = mnn::train(x, y, c.training, split);
    mnn::ModelFile model{std::move(result.params), c.training, features::encoder_hash(encoder), result.history};

    io::CsvWriter h({"epoch", "train_loss", "test_loss"});
    for (std::size_t e = 0; e < model.history.train_loss.size(); ++e) {
        h.field(e + 1).field(model.history.train_loss[e]);
        if (e < model.history.test_loss.size())
            h.field(model.history.test_loss[e]);
        else
            h.field(std::string_view{});
        h.end_row();
    }
    json summary = {{"train", split.train.size()},
                    {"test", split.test.size()},
                    {"epochs", c.training.epochs},
                    {"parameters", mnn::parameter_count(model.params.layout)},
                    {"final_train_loss", model.history.train_loss.empty() ? 0.0 : model.history.train_loss.back()},
                    {"final_test_loss", model.history.test_loss.empty() ? 0.0 : model.history.test_loss.back()}};
    return {{"model.json", mnn::model_to_json(model)}, {"history.csv", h.str()}, {"summary.json", summary_json(summary)}};
}

Outputs predict(const PipelineConfig&, const Inputs& in) {
    const auto table = read_features(io::read_file(in.at("features")));
    const auto encoder = features::encoder_from_json(io::read_file(in.at("encoder")));
    const auto model = mnn::model_from_json(io::read_file(in.at("model")), features::encoder_hash(encoder));
    if (static_cast<std::size_t>(model.params.layout.input_dim) != table.columns.size())
        throw ShapeError("model input width does not match the feature table");
    std::vector<std::size_t> rows(table.ids.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    const Eigen::MatrixXd out = mnn::predict(model.params, columns_of(table, rows));
    Distributions d;
    for (std::size_t j = 0; j < rows.size(); ++j) {
        auto& dist = d[table.ids[j]];
        for (std::size_t b = 0; b < opmode::kBinCount; ++b)
            dist.fractions[b] = out(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j));
    }
    json summary = {{"links", d.size()}};
    return {{"predictions.csv", opmode::write_distributions_csv(d)}, {"summary.json", summary_json(summary)}};
}

Outputs baseline(const PipelineConfig& c, const Inputs& in) {
    const auto links = roadnet::read_links_csv(io::read_file(in.at("links")));
    const auto states = traffic::read_traffic_csv(io::read_file(in.at("traffic")));
    const auto table = bin_table(c);
    const auto library = opmode::DriveCycleLibrary::load(in.at("cycles/manifest"), table, c.vsp);
    Distributions d;
    std::map<std::string, std::size_t> families;
    for (const auto& l : links) {
        auto it = states.find(l.id);
        if (it == states.end()) throw ValidationError("traffic table has no link", {std::to_string(l.id.value)});
        const std::string family = opmode::cycle_family(l.road_type);
        ++families[family];
        d[l.id.value] = opmode::baseline_from_avg_speed(it->second.congested_speed_mph, family, library);
    }
    json summary = {{"links", d.size()}, {"cycles", library.cycles().size()}, {"links_by_family", families}};
    return {{"baseline.csv", opmode::write_distributions_csv(d)}, {"summary.json", summary_json(summary)}};
}

Outputs emissions_stage(const PipelineConfig& c, const Inputs& in) {
    const auto links = roadnet::read_links_csv(io::read_file(in.at("links")));
    const auto states = traffic::read_traffic_csv(io::read_file(in.at("traffic")));
    emissions::LoadReport load;
    const auto rates = emissions::load_rates(io::read_file(in.at("rates")), &load);
    std::map<std::uint32_t, const roadnet::RoadLink*> by_id;
    for (const auto& l : links) by_id[l.id.value] = &l;

    auto compute = [&](const Distributions& d) {
        std::vector<emissions::LinkEmissions> out;
        for (const auto& [id, dist] : d) {
            auto l = by_id.find(id);
            auto s = states.find(roadnet::LinkId{id});
            if (l == by_id.end() || s == states.end()) throw ValidationError("emissions input references unknown link", {std::to_string(id)});
            const double activity = emissions::activity_vehicle_hours(s->second.peak_hour_flow, s->second.travel_time_s);
            auto e = emissions::link_emissions(dist, activity, rates);
            e.link = id;
            e.town = l->second->town;
            out.push_back(std::move(e));
        }
        return out;
    };
    const auto grouping = c.grouping == "region" ? emissions::Grouping::region : emissions::Grouping::town;
    Outputs out;
    json summary = {{"pollutants", rates.pollutants}, {"rate_warnings", load.warnings}, {"grouping", c.grouping}};
    for (const auto& [name, key] : std::vector<std::pair<std::string, std::string>>{
             {"model", "predictions"}, {"baseline", "baseline"}, {"truth", "distributions"}}) {
        const auto e = compute(opmode::read_distributions_csv(io::read_file(in.at(key))));
        const auto totals = emissions::aggregate(e, grouping, c.regions);
        out[name + "_link_emissions.csv"] = emissions::write_link_emissions_csv(e);
        out[name + "_by_" + c.grouping + ".csv"] = emissions::write_aggregate_csv(totals);
        summary[name] = {{"links", e.size()}, {"unassigned", totals.unassigned}, {"total_g_per_hr", totals.total}};
    }
    out["summary.json"] = summary_json(summary);
    return out;
}

Outputs evaluate(const PipelineConfig&, const Inputs& in) {
    const auto table = read_features(io::read_file(in.at("features")));
    const auto test = ids_with_split(table, "test");
    const auto truth = restrict_to(opmode::read_distributions_csv(io::read_file(in.at("distributions"))), test);
    const auto model = restrict_to(opmode::read_distributions_csv(io::read_file(in.at("predictions"))), test);
    const auto base = restrict_to(opmode::read_distributions_csv(io::read_file(in.at("baseline"))), test);
    auto load_emissions = [&](const char* file) {
        eval::Emissions m;
        for (auto& e : emissions::read_link_emissions_csv(io::read_file(in.at(std::string("emissions/") + file))))
            if (test.count(e.link)) m.emplace(e.link, std::move(e));
        return m;
    };
    const auto e_model = load_emissions("model_link_emissions.csv");
    const auto e_base = load_emissions("baseline_link_emissions.csv");
    const auto e_truth = load_emissions("truth_link_emissions.csv");

    eval::ComparisonReport report;
    report.links = truth.size();
    report.bins = eval::per_bin_report(model, base, truth);
    report.pollutants = eval::per_pollutant_report(e_model, e_base, e_truth);
    std::size_t bins_improved = 0;
    for (const auto& b : report.bins) bins_improved += b.rmse_improvement && *b.rmse_improvement >= 0.3;
    json rmse_improvement = json::object();
    for (const auto& p : report.pollutants) rmse_improvement[p.pollutant] = p.rmse_improvement ? json(*p.rmse_improvement) : json();
    json summary = {{"test_links", report.links},
                    {"bins_rmse_improved_30pct", bins_improved},
                    {"pollutant_rmse_improvement", rmse_improvement}};
    return {{"report.json", eval::report_to_json(report)},
            {"summary.json", summary_json(summary)},
            {"bin_scatter.csv", eval::bin_scatter_csv(model, base, truth)},
            {"pollutant_scatter.csv", eval::pollutant_scatter_csv(e_model, e_base, e_truth)},
            {"mape_bars.csv", eval::mape_bars_csv(report.pollutants)},
            {"bin_rmse.csv", eval::bin_rmse_csv(report.bins)}};
}

Outputs execute(Stage s, const PipelineConfig& c, const Inputs& in, const RunOptions& opt) {
    switch (s) {
        case Stage::build_network: return build_network(c, in);
        case Stage::derive_traffic: return derive_traffic(c, in);
        case Stage::process_traces: return process_traces(c, in, opt);
        case Stage::ground_truth: return ground_truth(c, in);
        case Stage::featurize: return featurize(c, in);
        case Stage::train: return train(c, in, opt);
        case Stage::predict: return predict(c, in);
        case Stage::baseline: return baseline(c, in);
        case Stage::emissions: return emissions_stage(c, in);
        case Stage::evaluate: return evaluate(c, in);
    }
    throw Error("unknown stage");
}

std::string one_line(const std::string& summary) {
    try {
        return json::parse(summary).dump();
    } catch (const json::exception&) {
        return {};
    }
}

}  // namespace

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> v = [] {
        std::vector<Stage> out;
        for (const auto& s : kStages) out.push_back(s.stage);
        return out;
    }();
    return v;
}

std::string to_string(Stage s) {
    for (const auto& i : kStages)
        if (i.stage == s) return i.name;
    return "unknown";
}

std::optional<Stage> parse_stage(std::string_view name) {
    for (const auto& i : kStages)
        if (name == i.name) return i.stage;
    return std::nullopt;
}

fs::path stage_dir(const PipelineConfig& config, Stage s) { return config.paths.output_dir / to_string(s); }

StageResult run_stage(Stage stage, const PipelineConfig& config, const RunOptions& options) {
    const std::string name = to_string(stage);
    const Inputs inputs = inputs_of(stage, config);
    const json section = stage_config(stage, config);
    const std::string config_hash = io::sha256_hex(section.dump());
    json input_hashes = json::object();
    for (const auto& [key, path] : inputs) input_hashes[key] = io::sha256_file(path);
    if (stage == Stage::ground_truth && config.paths.bin_table.empty())
        input_hashes["bin_table"] = io::sha256_hex(opmode::detail::kStandardBinTableCsv);

    const fs::path dir = stage_dir(config, stage);
    const fs::path manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path) && !options.force) {
        json old;
        try {
            old = json::parse(io::read_file(manifest_path));
        } catch (const json::exception&) {
            throw ValidationError("unreadable manifest " + manifest_path.string() + "; rerun with --force");
        }
        if (old.value("config_hash", "") != config_hash)
            throw ConfigError("config for " + name + " changed since its last run (" + manifest_path.string() +
                              "); rerun with --force to replace its outputs");
        bool current = old.value("inputs", json::object()) == input_hashes;
        const json recorded = old.value("outputs", json::object());
        for (const auto& [file, hash] : recorded.items())
            current = current && fs::exists(dir / file) && io::sha256_file(dir / file) == hash.get<std::string>();
        if (current) {
            log(options, name + ": up to date");
            return {stage, true, one_line(fs::exists(dir / "summary.json") ? io::read_file(dir / "summary.json") : "")};
        }
    }

    log(options, name + ": running");
    const Outputs outputs = execute(stage, config, inputs, options);
    fs::remove_all(dir);

    json manifest;
    manifest["format"] = kManifestFormat;
    manifest["version"] = kManifestVersion;
    manifest["stage"] = name;
    manifest["seed"] = config.seed;
    manifest["config_hash"] = config_hash;
    manifest["config"] = section;
    manifest["inputs"] = input_hashes;
    manifest["outputs"] = json::object();
    for (const auto& [file, content] : outputs) {
        io::write_file(dir / file, content);
        manifest["outputs"][file] = io::sha256_hex(content);
    }
    // The manifest goes last so an interrupted stage never looks complete.
    io::write_file(manifest_path, manifest.dump(1) + "\n");
    StageResult r{stage, false, {}};
    if (auto it = outputs.find("summary.json"); it != outputs.end()) r.summary = one_line(it->second);
    log(options, name + ": done " + r.summary);
    return r;
}

std::vector<StageResult> run_all(const PipelineConfig& config, const RunOptions& options) {
    std::vector<StageResult> out;
    for (Stage s : all_stages()) out.push_back(run_stage(s, config, options));
    return out;
}

}  // namespace opmodenet::pipeline
