#include "opmodenet/geo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace opmodenet::geo {

namespace {

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

double haversine_m(LatLon a, LatLon b) {
    const double phi1 = deg2rad(a.lat);
    const double phi2 = deg2rad(b.lat);
    const double dphi = phi2 - phi1;
    const double dlambda = deg2rad(b.lon - a.lon);
    const double s1 = std::sin(dphi / 2.0);
    const double s2 = std::sin(dlambda / 2.0);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double polyline_length_m(std::span<const LatLon> line) {
    double total = 0.0;
    for (std::size_t i = 1; i < line.size(); ++i) total += haversine_m(line[i - 1], line[i]);
    return total;
}

LocalProjection::LocalProjection(LatLon origin)
    : origin_(origin),
      meters_per_deg_lat_(kEarthRadiusM * std::numbers::pi / 180.0),
      meters_per_deg_lon_(kEarthRadiusM * std::numbers::pi / 180.0 * std::cos(deg2rad(origin.lat))) {}

Vec2 LocalProjection::to_xy(LatLon p) const {
    return {(p.lon - origin_.lon) * meters_per_deg_lon_, (p.lat - origin_.lat) * meters_per_deg_lat_};
}

LatLon LocalProjection::to_latlon(Vec2 p) const {
    return {origin_.lat + p.y / meters_per_deg_lat_, origin_.lon + p.x / meters_per_deg_lon_};
}

PolylineProjection project_onto(std::span<const LatLon> line, LatLon p, const LocalProjection& proj) {
    PolylineProjection best;
    best.distance_m = std::numeric_limits<double>::infinity();
    const Vec2 q = proj.to_xy(p);
    double arc_before = 0.0;
    for (std::size_t i = 1; i < line.size(); ++i) {
        const Vec2 a = proj.to_xy(line[i - 1]);
        const Vec2 b = proj.to_xy(line[i]);
        const double dx = b.x - a.x;
        const double dy = b.y - a.y;
        const double len2 = dx * dx + dy * dy;
        double t = 0.0;
        if (len2 > 0.0) t = std::clamp(((q.x - a.x) * dx + (q.y - a.y) * dy) / len2, 0.0, 1.0);
        const double cx = a.x + t * dx - q.x;
        const double cy = a.y + t * dy - q.y;
        const double d = std::sqrt(cx * cx + cy * cy);
        const double seg_len = haversine_m(line[i - 1], line[i]);
        if (d < best.distance_m) {
            best.distance_m = d;
            best.offset_m = arc_before + t * seg_len;
            best.segment = i - 1;
        }
        arc_before += seg_len;
    }
    return best;
}

LatLon point_at(std::span<const LatLon> line, double offset_m) {
    if (line.empty()) return {};
    if (offset_m <= 0.0) return line.front();
    double arc = 0.0;
    for (std::size_t i = 1; i < line.size(); ++i) {
        const double seg = haversine_m(line[i - 1], line[i]);
        if (arc + seg >= offset_m && seg > 0.0) {
            const double t = (offset_m - arc) / seg;
            return {line[i - 1].lat + t * (line[i].lat - line[i - 1].lat),
                    line[i - 1].lon + t * (line[i].lon - line[i - 1].lon)};
        }
        arc += seg;
    }
    return line.back();
}

}  // namespace opmodenet::geo
