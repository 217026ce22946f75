#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/synth.hpp"

#include <algorithm>

namespace opmodenet::synth {

namespace {

std::string town_name(std::size_t ix, std::size_t iy) {
    return "town_" + std::to_string(iy) + std::to_string(ix);
}

std::size_t tile(double v, double extent, std::size_t parts) {
    if (parts <= 1 || extent <= 0.0) return 0;
    const auto i = static_cast<std::size_t>(v / extent * static_cast<double>(parts));
    return std::min(i, parts - 1);
}

}  // namespace

const std::map<std::string, RoadRegime>& default_regimes() {
    static const std::map<std::string, RoadRegime> r = {
        {"motorway", {55.0, 3, 40000.0, "1"}},
        {"primary", {35.0, 2, 15000.0, "3"}},
        {"secondary", {30.0, 2, 9000.0, "5"}},
        {"residential", {25.0, 1, 3000.0, "7"}},
    };
    return r;
}

std::string road_type_of_line(std::size_t line, std::size_t line_count, bool mixed) {
    if (!mixed) return "residential";
    if (line_count >= 8 && line % 8 == 4) return "motorway";
    if (line % 4 == 0) return "primary";
    if (line % 4 == 2) return "secondary";
    return "residential";
}

roadnet::NetworkExtract grid_network(const GridSpec& spec) {
    if (spec.rows < 2 || spec.cols < 2) throw ConfigError("grid needs at least 2 rows and 2 columns");
    if (!(spec.spacing_m > 0.0)) throw ConfigError("grid spacing must be positive");
    const geo::LocalProjection proj(spec.origin);
    roadnet::NetworkExtract ex;
    auto node_id = [&](std::size_t r, std::size_t c) { return static_cast<roadnet::NodeId>(r * spec.cols + c + 1); };
    for (std::size_t r = 0; r < spec.rows; ++r)
        for (std::size_t c = 0; c < spec.cols; ++c)
            ex.nodes[node_id(r, c)] = proj.to_latlon({static_cast<double>(c) * spec.spacing_m, static_cast<double>(r) * spec.spacing_m});

    const double width = static_cast<double>(spec.cols - 1) * spec.spacing_m;
    const double height = static_cast<double>(spec.rows - 1) * spec.spacing_m;
    roadnet::WayId next_way = 1000;

    auto add = [&](roadnet::NodeId a, roadnet::NodeId b, std::size_t line, std::size_t line_count, const std::string& name,
                   double mx, double my, bool one_way) {
        const std::string type = road_type_of_line(line, line_count, spec.mixed_road_types);
        const auto& regime = default_regimes().at(type);
        roadnet::Way w;
        w.id = next_way++;
        w.nodes = {a, b};
        w.tags["highway"] = type;
        w.tags["name"] = name;
        // A third of the residential lines carry no posted limit.
        if (!(type == "residential" && line % 3 == 1)) w.tags["maxspeed"] = io::format_double(regime.speed_limit_mph) + " mph";
        w.tags["lanes"] = std::to_string(regime.lanes);
        w.tags["town"] = town_name(tile(mx, width, spec.towns_x), tile(my, height, spec.towns_y));
        if (one_way) w.tags["oneway"] = "yes";
        ex.ways.push_back(std::move(w));
    };

    for (std::size_t r = 0; r < spec.rows; ++r)
        for (std::size_t c = 0; c + 1 < spec.cols; ++c)
            add(node_id(r, c), node_id(r, c + 1), r, spec.rows, "Row " + std::to_string(r),
                (static_cast<double>(c) + 0.5) * spec.spacing_m, static_cast<double>(r) * spec.spacing_m,
                !spec.all_two_way && r % 4 == 1);
    for (std::size_t c = 0; c < spec.cols; ++c)
        for (std::size_t r = 0; r + 1 < spec.rows; ++r)
            add(node_id(r, c), node_id(r + 1, c), c, spec.cols, "Col " + std::to_string(c),
                static_cast<double>(c) * spec.spacing_m, (static_cast<double>(r) + 0.5) * spec.spacing_m, false);
    return ex;
}

roadnet::NetworkExtract reference_network() {
    constexpr std::size_t rows = 5, cols = 10;
    const geo::LocalProjection proj({42.3736, -71.1097});
    roadnet::NetworkExtract ex;
    auto node_id = [](std::size_t r, std::size_t c) { return static_cast<roadnet::NodeId>(100 + r * cols + c); };
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            ex.nodes[node_id(r, c)] = proj.to_latlon({static_cast<double>(c) * 150.0, static_cast<double>(r) * 120.0});

    roadnet::WayId next_way = 1;
    // Rows are stitched from several ways; row 2 is split finer than the rest.
    const std::vector<std::size_t> coarse = {3, 2, 2, 2};
    const std::vector<std::size_t> fine = {2, 2, 2, 1, 1, 1};
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t c = 0;
        for (std::size_t len : r == 2 ? fine : coarse) {
            roadnet::Way w;
            w.id = next_way++;
            for (std::size_t k = 0; k <= len; ++k) w.nodes.push_back(node_id(r, c + k));
            c += len;
            w.tags["highway"] = r == 2 ? "primary" : "residential";
            w.tags["name"] = "Street " + std::string(1, static_cast<char>('A' + r));
            w.tags["maxspeed"] = r == 2 ? "35 mph" : "25 mph";
            if (r == 4) w.tags["oneway"] = "yes";
            w.tags["town"] = c <= 5 ? "west" : "east";
            ex.ways.push_back(std::move(w));
        }
    }
    for (std::size_t c = 0; c < cols; ++c)
        for (std::size_t r = 0; r + 1 < rows; ++r) {
            roadnet::Way w;
            w.id = next_way++;
            w.nodes = {node_id(r, c), node_id(r + 1, c)};
            w.tags["highway"] = c % 3 == 0 ? "secondary" : "residential";
            w.tags["name"] = "Avenue " + std::to_string(c + 1);
            if (c % 3 == 0) w.tags["lanes"] = "2";
            w.tags["town"] = c < 5 ? "west" : "east";
            ex.ways.push_back(std::move(w));
        }
    return ex;
}

}  // namespace opmodenet::synth
