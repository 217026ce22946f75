#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/roadnet.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <array>
#include <limits>
#include <numbers>

namespace opmodenet::roadnet {

CsvGridElevation CsvGridElevation::from_csv(std::string_view csv, std::string provenance, double max_snap_m) {
    const auto table = io::parse_csv(csv);
    const auto lat = table.require("lat");
    const auto lon = table.require("lon");
    const auto elev = table.require("elev_m");
    CsvGridElevation out;
    out.provenance_ = std::move(provenance);
    out.max_snap_m_ = max_snap_m;
    // One cell spans roughly the snap radius so a 3x3 neighborhood suffices.
    out.cell_deg_ = std::max(max_snap_m / 111000.0, 1e-4);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = "elevation row " + std::to_string(table.row_lines[r]);
        Sample s{{io::parse_double(row[lat], where), io::parse_double(row[lon], where)},
                 io::parse_double(row[elev], where)};
        const std::pair<long, long> key{std::lround(std::floor(s.pos.lat / out.cell_deg_)),
                                        std::lround(std::floor(s.pos.lon / out.cell_deg_))};
        out.cells_[key].push_back(out.points_.size());
        out.points_.push_back(s);
    }
    return out;
}

std::optional<double> CsvGridElevation::elevation_m(geo::LatLon p) const {
    const long ci = std::lround(std::floor(p.lat / cell_deg_));
    const long cj = std::lround(std::floor(p.lon / cell_deg_));
    // Longitude cells shrink with latitude; widen the search accordingly.
    const long lon_span = 1 + static_cast<long>(std::ceil(1.0 / std::max(std::cos(p.lat * std::numbers::pi / 180.0), 0.05)));
    double best = std::numeric_limits<double>::infinity();
    std::optional<double> value;
    for (long di = -1; di <= 1; ++di)
        for (long dj = -lon_span; dj <= lon_span; ++dj) {
            auto it = cells_.find({ci + di, cj + dj});
            if (it == cells_.end()) continue;
            for (std::size_t idx : it->second) {
                const double d = geo::haversine_m(p, points_[idx].pos);
                // Ties resolve to the earlier row for determinism.
                if (d < best) {
                    best = d;
                    value = points_[idx].elev;
                }
            }
        }
    if (best > max_snap_m_) return std::nullopt;
    return value;
}

OpenElevationSource::OpenElevationSource(Transport transport, std::string endpoint)
    : transport_(std::move(transport)), endpoint_(std::move(endpoint)) {}

std::string OpenElevationSource::request_body(std::span<const geo::LatLon> points) {
    nlohmann::json locations = nlohmann::json::array();
    for (const auto& p : points) locations.push_back({{"latitude", p.lat}, {"longitude", p.lon}});
    return nlohmann::json{{"locations", locations}}.dump();
}

std::vector<std::pair<geo::LatLon, double>> OpenElevationSource::parse_response(std::string_view body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body.begin(), body.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed elevation response: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("results") || !doc["results"].is_array())
        throw ParseError("elevation response lacks a 'results' array");
    std::vector<std::pair<geo::LatLon, double>> out;
    for (const auto& r : doc["results"]) {
        if (!r.contains("latitude") || !r.contains("longitude") || !r.contains("elevation") ||
            !r["elevation"].is_number())
            throw ParseError("elevation result needs latitude, longitude and numeric elevation");
        out.push_back({{r["latitude"].get<double>(), r["longitude"].get<double>()}, r["elevation"].get<double>()});
    }
    return out;
}

void OpenElevationSource::prefetch(std::span<const geo::LatLon> points) {
    if (points.empty()) return;
    const auto results = parse_response(transport_(request_body(points)));
    if (results.size() != points.size())
        throw ParseError("elevation response has " + std::to_string(results.size()) + " results for " +
                         std::to_string(points.size()) + " locations");
    // Results are positional; the echoed coordinates are informational.
    for (std::size_t i = 0; i < points.size(); ++i) cache_[{points[i].lat, points[i].lon}] = results[i].second;
}

std::optional<double> OpenElevationSource::elevation_m(geo::LatLon p) const {
    if (auto it = cache_.find({p.lat, p.lon}); it != cache_.end()) return it->second;
    std::optional<double> value;
    try {
        const std::array<geo::LatLon, 1> one{p};
        const auto results = parse_response(transport_(request_body(one)));
        if (results.size() == 1) value = results[0].second;
    } catch (const std::exception&) {
        value = std::nullopt;
    }
    cache_[{p.lat, p.lon}] = value;
    return value;
}

GradeResult compute_grade(const RoadLink& link, const ElevationSource& elevation) {
    if (link.geometry.size() < 2) return {0.0, true, "link has no geometry"};
    const auto from = elevation.elevation_m(link.geometry.front());
    const auto to = elevation.elevation_m(link.geometry.back());
    if (!from || !to) return {0.0, true, "elevation lookup failed"};
    const double run = geo::haversine_m(link.geometry.front(), link.geometry.back());
    if (!(run > 0.0)) return {0.0, true, "endpoints coincide"};
    const double grade = (*to - *from) / run;
    if (!std::isfinite(grade) || std::abs(grade) >= 1.0) return {0.0, true, "implausible grade rejected"};
    return {grade, false, {}};
}

GradeReport assign_grades(std::span<RoadLink> links, const ElevationSource& elevation) {
    GradeReport report;
    for (auto& link : links) {
        const auto g = compute_grade(link, elevation);
        link.grade = g.grade;
        link.grade_flagged = g.flagged;
        if (g.flagged) ++report.flagged;
    }
    return report;
}

}  // namespace opmodenet::roadnet
