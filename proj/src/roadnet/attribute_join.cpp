#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/roadnet.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>

namespace opmodenet::roadnet {

namespace {

constexpr double kDensifyStepM = 5.0;

std::vector<std::string> split_top_level(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(io::trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(io::trim(cur));
    return out;
}

geo::LatLon parse_coordinate(const std::string& pair) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : pair) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(cur);
    if (parts.size() != 2) throw ParseError("WKT coordinate '" + pair + "' must be 'lon lat'");
    return {io::parse_double(parts[1], "WKT latitude"), io::parse_double(parts[0], "WKT longitude")};
}

std::vector<geo::LatLon> densify(std::span<const geo::LatLon> line) {
    std::vector<geo::LatLon> out;
    if (line.empty()) return out;
    out.push_back(line.front());
    for (std::size_t i = 1; i < line.size(); ++i) {
        const double seg = geo::haversine_m(line[i - 1], line[i]);
        const int steps = std::max(1, static_cast<int>(std::ceil(seg / kDensifyStepM)));
        for (int s = 1; s <= steps; ++s) {
            const double t = static_cast<double>(s) / steps;
            out.push_back({line[i - 1].lat + t * (line[i].lat - line[i - 1].lat),
                           line[i - 1].lon + t * (line[i].lon - line[i - 1].lon)});
        }
    }
    return out;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

struct BoundingBox {
    double min_lat = std::numeric_limits<double>::infinity();
    double max_lat = -std::numeric_limits<double>::infinity();
    double min_lon = std::numeric_limits<double>::infinity();
    double max_lon = -std::numeric_limits<double>::infinity();

    void add(geo::LatLon p) {
        min_lat = std::min(min_lat, p.lat);
        max_lat = std::max(max_lat, p.lat);
        min_lon = std::min(min_lon, p.lon);
        max_lon = std::max(max_lon, p.lon);
    }

    bool overlaps(const BoundingBox& o, double pad_lat, double pad_lon) const {
        return min_lat - pad_lat <= o.max_lat && o.min_lat <= max_lat + pad_lat && min_lon - pad_lon <= o.max_lon &&
               o.min_lon <= max_lon + pad_lon;
    }
};

}  // namespace

std::vector<geo::LatLon> parse_wkt(std::string_view wkt) {
    const std::string text = io::trim(wkt);
    const auto open = text.find('(');
    const auto close = text.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw ParseError("malformed WKT '" + text + "'");
    const std::string kind = io::to_lower(io::trim(text.substr(0, open)));
    const std::string body = text.substr(open + 1, close - open - 1);
    std::vector<geo::LatLon> out;
    if (kind == "point") {
        out.push_back(parse_coordinate(io::trim(body)));
    } else if (kind == "linestring") {
        for (const auto& pair : split_top_level(body, ',')) out.push_back(parse_coordinate(pair));
        if (out.size() < 2) throw ParseError("WKT LINESTRING needs at least 2 vertices");
    } else {
        throw ParseError("unsupported WKT geometry '" + kind + "'");
    }
    return out;
}

std::string to_wkt(std::span<const geo::LatLon> line) {
    std::string out = line.size() == 1 ? "POINT (" : "LINESTRING (";
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (i) out += ", ";
        out += io::format_double(line[i].lon) + " " + io::format_double(line[i].lat);
    }
    out += ")";
    return out;
}

ParsedRecords parse_attribute_records(std::string_view csv) {
    const auto table = io::parse_csv(csv);
    const auto geom_col = table.find("geometry") ? table.find("geometry") : table.find("wkt");
    if (!geom_col) throw ParseError("attribute CSV needs a 'geometry' (WKT) column", 1, 1);
    const auto name_col = table.find("name");
    ParsedRecords out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        AttributeRecord rec;
        rec.row = r + 1;
        const std::string geom = io::trim(row[*geom_col]);
        if (geom.empty()) {
            out.rejected.push_back({rec.row, "no geometry"});
            continue;
        }
        try {
            rec.geometry = parse_wkt(geom);
        } catch (const ParseError& e) {
            out.rejected.push_back({rec.row, e.what()});
            continue;
        }
        if (name_col) rec.name = io::trim(row[*name_col]);
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (c == *geom_col || (name_col && c == *name_col)) continue;
            rec.attributes[table.header[c]] = io::trim(row[c]);
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

double name_similarity(std::string_view a, std::string_view b) {
    const std::string x = io::to_lower(io::trim(a));
    const std::string y = io::to_lower(io::trim(b));
    if (x.empty() || y.empty()) return 0.0;
    const double longest = static_cast<double>(std::max(x.size(), y.size()));
    return 1.0 - static_cast<double>(levenshtein(x, y)) / longest;
}

double mean_distance_m(std::span<const geo::LatLon> record, const RoadLink& link) {
    const geo::LocalProjection proj(link.geometry.front());
    const auto pts = densify(record);
    double total = 0.0;
    for (const auto& p : pts) total += geo::project_onto(link.geometry, p, proj).distance_m;
    return total / static_cast<double>(pts.size());
}

void apply_attributes(RoadLink& link, const std::map<std::string, std::string>& attributes) {
    auto number = [&](const char* key) -> std::optional<double> {
        auto it = attributes.find(key);
        if (it == attributes.end() || io::trim(it->second).empty()) return std::nullopt;
        return io::parse_double(it->second, key);
    };
    auto text = [&](const char* key) -> std::optional<std::string> {
        auto it = attributes.find(key);
        if (it == attributes.end() || io::trim(it->second).empty()) return std::nullopt;
        return io::trim(it->second);
    };
    if (auto v = number("aadt")) link.aadt = *v;
    if (auto v = number("capacity")) link.capacity_vph = *v;
    if (auto v = number("free_flow_speed")) link.free_flow_speed_mph = *v;
    if (auto v = number("speed_limit")) link.speed_limit_mph = *v;
    if (auto v = number("lanes")) link.lanes = std::max(1, static_cast<int>(std::lround(*v)));
    if (auto v = text("urban_type")) link.urban_type = *v;
    if (auto v = text("functional_class")) link.functional_class = *v;
    if (auto v = text("town")) link.town = *v;
}

JoinReport join_attributes(std::vector<RoadLink>& links, std::span<const AttributeRecord> records,
                           const JoinParams& params) {
    JoinReport report;
    std::vector<std::size_t> order(links.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return links[a].id < links[b].id; });

    std::vector<BoundingBox> boxes(links.size());
    for (std::size_t i = 0; i < links.size(); ++i)
        for (const auto& p : links[i].geometry) boxes[i].add(p);

    std::map<LinkId, std::size_t> index_of;
    for (std::size_t i = 0; i < links.size(); ++i) index_of[links[i].id] = i;

    for (const auto& rec : records) {
        if (rec.geometry.empty()) {
            report.rejected.push_back({rec.row, "no geometry"});
            continue;
        }
        BoundingBox rb;
        for (const auto& p : rec.geometry) rb.add(p);
        const double pad_lat = params.gate_m / 111000.0;
        const double pad_lon = pad_lat / std::max(std::cos(rec.geometry.front().lat * std::numbers::pi / 180.0), 0.05);

        std::optional<std::size_t> best;
        double best_score = -std::numeric_limits<double>::infinity();
        double best_dist = 0.0;
        for (std::size_t i : order) {
            if (!boxes[i].overlaps(rb, pad_lat, pad_lon)) continue;
            const double d = mean_distance_m(rec.geometry, links[i]);
            if (d > params.gate_m) continue;
            const double spatial = 1.0 - d / params.gate_m;
            const double score =
                (1.0 - params.name_weight) * spatial + params.name_weight * name_similarity(rec.name, links[i].name);
            if (score > best_score) {
                best_score = score;
                best = i;
                best_dist = d;
            }
        }
        if (!best) {
            report.unmatched.push_back(rec.row);
            continue;
        }
        RoadLink& winner = links[*best];
        apply_attributes(winner, rec.attributes);
        if (winner.reverse)
            if (auto it = index_of.find(*winner.reverse); it != index_of.end())
                apply_attributes(links[it->second], rec.attributes);
        report.matches.push_back({rec.row, winner.id, best_score, best_dist});
    }
    return report;
}

}  // namespace opmodenet::roadnet
