#pragma once

#include "opmodenet/geo.hpp"
#include "opmodenet/roadnet.hpp"

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace opmodenet::trajectory {

struct TracePoint {
    double t = 0.0;  ///< seconds since the Unix epoch
    geo::LatLon pos;
};

struct RawTrace {
    std::string id;
    std::vector<TracePoint> points;
    std::string device_meta;
};

struct SkippedTrack {
    std::string id;
    std::string reason;
};

struct ParsedTraces {
    std::vector<RawTrace> traces;
    std::size_t dropped_points = 0;  ///< missing or non-increasing timestamps
    std::vector<SkippedTrack> skipped;
};

/// Seconds since the epoch for an ISO-8601 timestamp such as
/// 2024-05-01T08:00:00Z or 2024-05-01T08:00:00.250+02:00.
double parse_iso8601(std::string_view text);
std::string format_iso8601(double seconds);

/// One RawTrace per <trkseg>. Trace ids are "<source>:<track>:<segment>".
ParsedTraces parse_gpx(std::string_view document, std::string_view source = "trace");

/// Writes a single-track GPX 1.1 document with one segment per trace.
std::string write_gpx(std::span<const RawTrace> traces, std::string_view creator = "opmodenet");

struct TraceSegment {
    std::string id;
    std::string trace_id;
    std::vector<TracePoint> points;
};

struct GapSplit {
    std::vector<TraceSegment> segments;
    std::size_t discarded_points = 0;  ///< points of single-point segments
};

/// Splits wherever consecutive points are more than `max_gap_s` apart.
GapSplit segment_gaps(const RawTrace& trace, double max_gap_s = 180.0);

// ---------------------------------------------------------------------------
// Road network with spatial index and shortest paths

struct Candidate {
    std::size_t link = 0;  ///< index into RoadNetwork::links()
    double distance_m = 0.0;
    double offset_m = 0.0;  ///< arc length along the link
};

class RoadNetwork {
public:
    explicit RoadNetwork(std::vector<roadnet::RoadLink> links, double cell_m = 100.0);

    const std::vector<roadnet::RoadLink>& links() const { return links_; }
    std::optional<std::size_t> index_of(roadnet::LinkId id) const;

    /// Closest point of every link within `radius_m`, ordered by link index.
    std::vector<Candidate> candidates(geo::LatLon p, double radius_m) const;

    /// Arc-length position of a point on a link.
    geo::LatLon point_on(std::size_t link, double offset_m) const;

    /// Shortest node-to-node path over directed links, searching no farther
    /// than `bound_m`. `from_link`'s end node is the source.
    class ShortestPaths {
    public:
        ShortestPaths(const RoadNetwork& net, std::size_t from_link, double bound_m);
        double distance_to_start_of(std::size_t link) const;
        std::vector<std::size_t> path_to_start_of(std::size_t link) const;

    private:
        const RoadNetwork* net_;
        double bound_;
        std::unordered_map<std::size_t, double> dist_;
        std::unordered_map<std::size_t, std::size_t> via_;  ///< node -> incoming link
    };

private:
    friend class ShortestPaths;

    std::vector<roadnet::RoadLink> links_;
    std::map<roadnet::LinkId, std::size_t> by_id_;
    geo::LocalProjection proj_;
    double cell_m_;
    std::vector<std::vector<geo::Vec2>> xy_;
    std::vector<std::vector<double>> cum_;  ///< haversine arc length at each vertex
    std::unordered_map<long long, std::vector<std::pair<std::size_t, std::size_t>>> cells_;
    std::vector<std::size_t> from_node_;
    std::vector<std::size_t> to_node_;
    std::vector<std::vector<std::size_t>> out_links_;  ///< by dense node index
};

// ---------------------------------------------------------------------------
// Hidden Markov matching

/// Log-score lattice: emission[t][j], transition[t][i][j] from state i at t-1
/// to state j at t (transition[0] is unused).
struct Lattice {
    std::vector<std::vector<double>> emission;
    std::vector<std::vector<std::vector<double>>> transition;
};

struct ViterbiPiece {
    std::size_t start = 0;        ///< first layer of the piece
    std::vector<std::size_t> states;
    double score = 0.0;
};

/// Max-score decoding. When no finite path reaches layer t the decode is cut
/// and a new piece starts at t. Ties keep the lower state index.
std::vector<ViterbiPiece> viterbi(const Lattice& lattice);

struct MatchParams {
    double sigma_m = 10.0;
    double lambda_m = 20.0;
    double radius_m = 50.0;
    double reverse_tolerance_m = 50.0;  ///< backward jitter allowed on one link
    double u_turn_penalty = 5.0;        ///< log-score cost of a route reversing onto a twin link
    double max_detour_m = 2000.0;       ///< route search bound beyond great-circle distance
    double max_unmatched_fraction = 0.5;
};

struct MatchedPiece {
    std::vector<std::size_t> point_indices;  ///< into the segment's points
    std::vector<std::size_t> point_links;    ///< link index per point
    std::vector<double> point_offsets;       ///< offset on that link
    std::vector<std::size_t> route;          ///< connected link indices
    std::vector<double> route_start;         ///< route arc length where each route link starts
    std::vector<double> positions;           ///< arc length along the route per point
};

struct MatchResult {
    bool rejected = false;
    std::string reason;
    std::vector<std::optional<std::size_t>> point_link;  ///< per segment point
    std::vector<MatchedPiece> pieces;
    std::size_t unmatched_points = 0;
};

MatchResult map_match(const TraceSegment& segment, const RoadNetwork& network, const MatchParams& params = {});

// ---------------------------------------------------------------------------
// Smoothing

struct SmoothParams {
    double bandwidth_s = 11.0;
    std::size_t bandwidth_points = 7;
};

struct SmoothedSeries {
    std::vector<double> t;           ///< integer seconds
    std::vector<double> position_m;  ///< non-decreasing
    std::vector<double> speed_mps;   ///< >= 0
    std::vector<double> accel_mps2;
    bool global_fallback = false;
};

/// Local quadratic regression of position on time with a tricube kernel whose
/// radius is the larger of `bandwidth_s` and the distance to the
/// `bandwidth_points`-th nearest sample. Evaluated on every integer second
/// from ceil(t0) to floor(tN). Short inputs get one global quadratic fit.
SmoothedSeries smooth(std::span<const double> times, std::span<const double> positions, const SmoothParams& params = {});

// ---------------------------------------------------------------------------
// Link-second records

struct LinkSecondRecord {
    roadnet::LinkId link;
    double t = 0.0;
    double speed_mph = 0.0;
    double accel_mphps = 0.0;
    double grade = 0.0;
    std::string segment_id;
};

/// Assigns each grid second to the route link containing its position.
std::vector<LinkSecondRecord> attribute_seconds(const MatchedPiece& piece, const SmoothedSeries& series,
                                                const RoadNetwork& network, const std::string& segment_id);

struct TrajectoryParams {
    double max_gap_s = 180.0;
    MatchParams match;
    SmoothParams smooth;
    double max_speed_mph = 100.0;
};

struct SegmentOutput {
    MatchResult match;
    std::vector<SmoothedSeries> series;  ///< one per kept piece
    std::vector<LinkSecondRecord> records;
    std::size_t pieces_over_speed = 0;
    std::size_t pieces_fallback = 0;
};

/// Match, smooth and attribute one segment. Pieces whose smoothed speed
/// exceeds the sanity gate are dropped and counted.
SegmentOutput process_segment(const TraceSegment& segment, const RoadNetwork& network, const TrajectoryParams& params);

struct LinkCoverage {
    roadnet::LinkId link;
    std::size_t seconds = 0;
    std::size_t segments = 0;
    double length_m = 0.0;
    bool retained = false;
};

struct CoverageFilter {
    double min_length_m = 50.0;
    double min_seconds = 120.0;
};

/// Per-link totals; a link is retained when length > min_length and
/// cumulative seconds > min_seconds.
std::vector<LinkCoverage> coverage(std::span<const LinkSecondRecord> records, const RoadNetwork& network,
                                   const CoverageFilter& filter = {});

/// A named daily time window [start_hour, end_hour) in local time.
struct TimeWindow {
    std::string name;
    double start_hour = 0.0;
    double end_hour = 24.0;
};

/// Name of the window holding timestamp `t`, or empty.
std::string window_of(double t, std::span<const TimeWindow> windows, double utc_offset_hours);

std::string write_link_seconds_csv(std::span<const LinkSecondRecord> records);
std::vector<LinkSecondRecord> read_link_seconds_csv(std::string_view csv);
std::string write_coverage_csv(std::span<const LinkCoverage> rows);

}  // namespace opmodenet::trajectory
