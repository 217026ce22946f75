#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

namespace opmodenet::synth {

namespace fs = std::filesystem;

namespace {

bool is_canonical_twin(const roadnet::RoadLink& l) { return !l.reverse || l.id < *l.reverse; }

struct Bounds {
    double min_lat = 90.0, max_lat = -90.0, min_lon = 180.0, max_lon = -180.0;
};

Bounds bounds_of(std::span<const roadnet::RoadLink> links) {
    Bounds b;
    for (const auto& l : links)
        for (const auto& p : l.geometry) {
            b.min_lat = std::min(b.min_lat, p.lat);
            b.max_lat = std::max(b.max_lat, p.lat);
            b.min_lon = std::min(b.min_lon, p.lon);
            b.max_lon = std::max(b.max_lon, p.lon);
        }
    return b;
}

double surface(double x, double y, double relief) {
    return 30.0 + relief * (std::sin(x / 700.0) + std::cos(y / 900.0) + 0.5 * std::sin((x + y) / 400.0));
}

}  // namespace

std::string attributes_csv(std::span<const roadnet::RoadLink> links, Rng& rng, double offset_m) {
    io::CsvWriter w({"geometry", "name", "aadt", "capacity", "free_flow_speed", "urban_type", "functional_class"});
    for (const auto& l : links) {
        if (!is_canonical_twin(l) || l.geometry.size() < 2) continue;
        const geo::LocalProjection proj(l.geometry.front());
        const geo::Vec2 a = proj.to_xy(l.geometry.front());
        const geo::Vec2 b = proj.to_xy(l.geometry.back());
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        const geo::Vec2 n{-(b.y - a.y) / len * offset_m, (b.x - a.x) / len * offset_m};
        std::vector<geo::LatLon> shifted;
        for (const auto& p : l.geometry) {
            const auto q = proj.to_xy(p);
            shifted.push_back(proj.to_latlon({q.x + n.x, q.y + n.y}));
        }
        auto it = default_regimes().find(l.road_type);
        const RoadRegime regime = it == default_regimes().end() ? RoadRegime{} : it->second;
        const double limit = l.speed_limit_mph.value_or(regime.speed_limit_mph);
        const int lanes = l.lanes.value_or(regime.lanes);

        w.field(roadnet::to_wkt(shifted)).field(l.name);
        w.field(std::round(regime.aadt_mean * rng.uniform(0.3, 2.2)));
        const bool has_capacity = rng.uniform() >= 0.3;
        const double per_lane = regime.functional_class == "1" ? 2000.0 : regime.functional_class == "3" ? 1000.0 : 700.0;
        const double capacity = std::round(lanes * per_lane * rng.uniform(0.8, 1.2));
        if (has_capacity)
            w.field(capacity);
        else
            w.field(std::string_view{});
        const bool has_ffs = rng.uniform() >= 0.3;
        const double ffs = std::round((limit + rng.uniform(0.0, 5.0)) * 10.0) / 10.0;
        if (has_ffs)
            w.field(ffs);
        else
            w.field(std::string_view{});
        const bool urban = !l.town.empty() && (static_cast<unsigned char>(l.town.back()) % 2 == 0);
        w.field(std::string_view(urban ? "urban" : "suburban")).field(regime.functional_class);
        w.end_row();
    }
    return w.str();
}

std::string elevation_csv(std::span<const roadnet::RoadLink> links, double step_m, double relief_m) {
    if (links.empty()) throw ConfigError("elevation grid needs links");
    const Bounds b = bounds_of(links);
    const geo::LocalProjection proj({b.min_lat, b.min_lon});
    const geo::Vec2 hi = proj.to_xy({b.max_lat, b.max_lon});
    const double margin = 2.0 * step_m;
    io::CsvWriter w({"lat", "lon", "elev_m"});
    for (double y = -margin; y <= hi.y + margin; y += step_m)
        for (double x = -margin; x <= hi.x + margin; x += step_m) {
            const geo::LatLon p = proj.to_latlon({x, y});
            w.field(p.lat).field(p.lon).field(std::round(surface(x, y, relief_m) * 100.0) / 100.0);
            w.end_row();
        }
    return w.str();
}

std::vector<features::TownEmbedding> embeddings(std::span<const std::string> towns, Rng& rng, std::size_t rank) {
    std::vector<double> base(features::kEmbeddingDim);
    for (auto& x : base) x = 0.5 * rng.normal();
    std::vector<std::vector<double>> factors(rank, std::vector<double>(features::kEmbeddingDim));
    for (auto& f : factors)
        for (auto& x : f) x = rng.normal();
    std::vector<features::TownEmbedding> out;
    for (const auto& town : towns) {
        features::TownEmbedding e{town, base};
        for (std::size_t k = 0; k < rank; ++k) {
            const double z = rng.normal() * 3.0 / static_cast<double>(k + 1);
            for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] += z * factors[k][i];
        }
        for (auto& x : e.values) x += 0.05 * rng.normal();
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<opmode::DriveCycle> drive_cycles(Rng& rng, double lo, double hi, double step, std::size_t duration_s) {
    if (!(lo > 0.0) || hi < lo || !(step > 0.0) || duration_s < 60) throw ConfigError("invalid drive-cycle sweep");
    std::vector<opmode::DriveCycle> out;
    for (const char* family : {"restricted", "unrestricted"}) {
        const bool restricted = std::string_view(family) == "restricted";
        for (double m = lo; m <= hi + 1e-9; m += step) {
            std::vector<double> v;
            double speed = 0.0, target = m;
            double hold = 0.0;
            for (std::size_t t = 0; t < duration_s; ++t) {
                if (hold <= 0.0) {
                    hold = rng.uniform(20.0, 60.0);
                    if (!restricted && rng.bernoulli(0.3)) {
                        target = 0.0;
                        hold = rng.uniform(5.0, 30.0);
                    } else {
                        target = m * (restricted ? rng.uniform(0.7, 1.3) : rng.uniform(0.4, 1.6));
                    }
                }
                hold -= 1.0;
                speed += std::clamp(0.4 * (target - speed), -3.0, 3.0);
                v.push_back(std::max(0.0, speed));
            }
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            for (auto& x : v) x = std::round(x * m / mean * 1000.0) / 1000.0;
            mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());

            char id[48];
            std::snprintf(id, sizeof id, "%s_%02d", family, static_cast<int>(std::lround(m)));
            out.push_back({id, family, std::move(v), mean});
        }
    }
    return out;
}

void write_drive_cycles(std::span<const opmode::DriveCycle> cycles, const fs::path& dir) {
    io::CsvWriter manifest({"cycle_id", "road_type", "mean_speed", "file"});
    for (const auto& c : cycles) {
        manifest.field(c.id).field(c.road_type).field(c.mean_speed_mph).field(c.id + ".csv");
        manifest.end_row();
        io::CsvWriter w({"t", "speed_mph"});
        for (std::size_t t = 0; t < c.speed_mph.size(); ++t) {
            w.field(t).field(c.speed_mph[t]);
            w.end_row();
        }
        io::write_file(dir / (c.id + ".csv"), w.str());
    }
    io::write_file(dir / "manifest.csv", manifest.str());
}

emissions::EmissionRateTable synthetic_rates() {
    // CO2 shape per bin; the other pollutants follow it with their own curvature.
    static const std::array<double, opmode::kBinCount> co2 = {
        1500, 2000,                                           // braking, idle
        3000, 3500, 4500, 5500, 6500, 8000,                   // 1-25 mph
        3500, 4000, 5000, 6500, 8000, 10000, 13000, 16000, 20000,  // 25-50 mph
        6000, 9000, 12000, 16000, 20000, 26000};              // 50+ mph
    struct Shape {
        const char* name;
        double scale;
        double exponent;
    };
    emissions::EmissionRateTable t;
    for (const Shape s : {Shape{"CO", 0.01, 0.6}, Shape{"CO2", 1.0, 0.0}, Shape{"NOx", 0.002, 0.4}, Shape{"PM2.5", 0.00008, 0.8}}) {
        t.pollutants.push_back(s.name);
        auto& r = t.rates[s.name];
        for (std::size_t i = 0; i < opmode::kBinCount; ++i)
            r[i] = std::round(s.scale * co2[i] * std::pow(co2[i] / 8000.0, s.exponent) * 1e4) / 1e4;
    }
    t.metadata["source"] = "synthetic, non-authoritative";
    return t;
}

DerivedNetwork derive_network(const roadnet::NetworkExtract& extract, std::string_view attributes,
                              std::string_view elevation, const traffic::TrafficParams& params) {
    DerivedNetwork d;
    d.links = roadnet::build_links(extract).links;
    const auto records = roadnet::parse_attribute_records(attributes);
    roadnet::join_attributes(d.links, records.records);
    const auto grid = roadnet::CsvGridElevation::from_csv(elevation, "synthetic");
    roadnet::assign_grades(d.links, grid);
    d.states = traffic::derive_all(d.links, params, {});
    return d;
}

void SyntheticSpec::validate() const {
    if (grid.rows < 2 || grid.cols < 2) throw ConfigError("synthetic grid needs at least 2 rows and 2 columns");
    if (!(grid.spacing_m > 0.0)) throw ConfigError("synthetic grid spacing must be positive");
    if (grid.towns_x == 0 || grid.towns_y == 0) throw ConfigError("synthetic town layout must be at least 1 by 1");
    if (!(traces.noise_m >= 0.0)) throw ConfigError("trace noise must be >= 0");
    if (!(traces.min_interval_s > 0.0) || traces.max_interval_s < traces.min_interval_s)
        throw ConfigError("trace sampling intervals must satisfy 0 < min <= max");
}

FixtureSet generate(const SyntheticSpec& spec, const fs::path& root) {
    spec.validate();
    FixtureSet set;
    set.root = root;
    auto put = [&](const std::string& rel, std::string_view content) {
        io::write_file(root / rel, content);
        set.files.push_back(rel);
    };

    const auto extract = grid_network(spec.grid);
    put("network.json", roadnet::serialize_network(extract));
    const auto built = roadnet::build_links(extract).links;

    Rng attr_rng(spec.seed ^ 0xA77E1B0Bu);
    const std::string attributes = attributes_csv(built, attr_rng);
    put("attributes.csv", attributes);
    const std::string elevation = elevation_csv(built);
    put("elevation.csv", elevation);

    const auto derived = derive_network(extract, attributes, elevation);
    set.links = derived.links.size();

    std::set<std::string> town_set;
    for (const auto& l : derived.links)
        if (!l.town.empty()) town_set.insert(l.town);
    const std::vector<std::string> towns(town_set.begin(), town_set.end());
    Rng emb_rng(spec.seed ^ 0xE3BEDD1Du);
    put("embeddings.csv", features::write_embeddings_csv(embeddings(towns, emb_rng)));

    Rng cyc_rng(spec.seed ^ 0xC1C1E5u);
    const auto cycles = drive_cycles(cyc_rng);
    write_drive_cycles(cycles, root / "cycles");
    set.files.push_back("cycles/manifest.csv");
    for (const auto& c : cycles) set.files.push_back("cycles/" + c.id + ".csv");
    put("rates.csv", emissions::write_rates_csv(synthetic_rates()));

    Rng trace_rng(spec.seed ^ 0x7AACE5u);
    const auto traces = generate_traces(derived.links, spec.traces, trace_rng);
    set.traces = traces.size();
    io::CsvWriter points({"trace_id", "point", "t", "link_id"});
    io::CsvWriter seconds({"trace_id", "t", "link_id", "position_m", "speed_mps", "accel_mps2"});
    io::CsvWriter routes({"trace_id", "seq", "link_id"});
    for (const auto& tr : traces) {
        const std::vector<trajectory::RawTrace> one{tr.raw};
        put("traces/" + tr.raw.id + ".gpx", trajectory::write_gpx(one, "opmodenet-synth"));
        for (std::size_t i = 0; i < tr.raw.points.size(); ++i) {
            points.field(tr.raw.id).field(i).field(tr.raw.points[i].t).field(static_cast<long long>(tr.point_links[i].value));
            points.end_row();
        }
        for (const auto& s : tr.seconds) {
            seconds.field(tr.raw.id).field(s.t).field(static_cast<long long>(s.link.value)).field(s.position_m);
            seconds.field(s.speed_mps).field(s.accel_mps2);
            seconds.end_row();
        }
        for (std::size_t k = 0; k < tr.route.size(); ++k) {
            routes.field(tr.raw.id).field(k).field(static_cast<long long>(tr.route[k].value));
            routes.end_row();
        }
    }
    put("answer/truth_points.csv", points.str());
    put("answer/truth_seconds.csv", seconds.str());
    put("answer/routes.csv", routes.str());
    const auto table = opmode::BinTable::standard();
    const auto coeffs = opmode::VspCoefficients::light_duty();
    put("answer/truth_distributions.csv",
        opmode::write_distributions_csv(true_distributions(traces, derived.links, table, coeffs)));

    nlohmann::json config;
    config["seed"] = spec.seed;
    config["paths"] = {{"network", "network.json"},   {"traces", "traces"},
                       {"elevation", "elevation.csv"}, {"attributes", "attributes.csv"},
                       {"embeddings", "embeddings.csv"}, {"rates", "rates.csv"},
                       {"cycles", "cycles/manifest.csv"}, {"output_dir", "out"}};
    config["trajectory"] = {{"utc_offset_hours", 0.0}};
    config["ground_truth"] = {{"source", "traces"}, {"window", "all"}};

    if (spec.feature_targets) {
        Rng target_rng(spec.seed ^ 0x7A26E7u);
        const auto model = TargetModel::random(target_rng, spec.target_scale);
        std::map<std::uint32_t, opmode::OpModeDistribution> targets;
        for (const auto& l : derived.links)
            targets[l.id.value] = model(derived.states.at(l.id).congested_speed_mph, l.grade, l.road_type);
        put("answer/targets.csv", opmode::write_distributions_csv(targets));
        config["paths"]["truth_distributions"] = "answer/targets.csv";
        config["ground_truth"]["source"] = "file";
    }
    put("config.json", config.dump(1) + "\n");
    std::sort(set.files.begin(), set.files.end());
    return set;
}

}  // namespace opmodenet::synth
