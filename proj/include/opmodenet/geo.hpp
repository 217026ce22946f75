#pragma once

#include <span>
#include <vector>

namespace opmodenet::geo {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kMetersPerMile = 1609.344;
inline constexpr double kMpsToMph = 3600.0 / kMetersPerMile;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;

    friend bool operator==(const LatLon&, const LatLon&) = default;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

/// Great-circle distance in meters.
double haversine_m(LatLon a, LatLon b);

/// Sum of haversine distances between consecutive vertices.
double polyline_length_m(std::span<const LatLon> line);

/// Equirectangular projection around a fixed origin. Accurate to well under
/// a meter over the few-kilometer extents used for matching and joining.
class LocalProjection {
public:
    explicit LocalProjection(LatLon origin);

    Vec2 to_xy(LatLon p) const;
    LatLon to_latlon(Vec2 p) const;
    LatLon origin() const { return origin_; }

private:
    LatLon origin_;
    double meters_per_deg_lat_;
    double meters_per_deg_lon_;
};

/// Closest point of a polyline to a query point.
struct PolylineProjection {
    double distance_m = 0.0;  ///< planar distance to the closest point
    double offset_m = 0.0;    ///< haversine arc length from the first vertex
    std::size_t segment = 0;  ///< index of the segment holding the closest point
};

/// Projects `p` onto `line` (>= 2 vertices). Offsets are measured in
/// haversine meters so they agree with `polyline_length_m`.
PolylineProjection project_onto(std::span<const LatLon> line, LatLon p, const LocalProjection& proj);

/// Point at arc length `offset_m` along `line` (clamped to the ends).
LatLon point_at(std::span<const LatLon> line, double offset_m);

}  // namespace opmodenet::geo
