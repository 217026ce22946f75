#pragma once

#include "opmodenet/geo.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opmodenet::roadnet {

using NodeId = std::int64_t;
using WayId = std::int64_t;

struct LinkId {
    std::uint32_t value = 0;

    friend auto operator<=>(const LinkId&, const LinkId&) = default;
};

struct Way {
    WayId id = 0;
    std::vector<NodeId> nodes;
    std::map<std::string, std::string> tags;
};

/// Raw road-network extract: coordinates of nodes and ordered node lists of ways.
struct NetworkExtract {
    std::map<NodeId, geo::LatLon> nodes;
    std::vector<Way> ways;
};

/// Parses the JSON network format:
///   {"nodes": {"<id>": [lat, lon], ...},
///    "ways": [{"id": <int>, "nodes": [<id>, ...], "tags": {"k": "v"}}, ...]}
/// Throws ParseError (with line/column) on malformed JSON and ValidationError
/// naming the offending ways on dangling node references or short ways.
NetworkExtract parse_network(std::string_view document);

/// Inverse of parse_network. Output is canonical (sorted keys, stable order).
std::string serialize_network(const NetworkExtract& extract);

/// Converts an OSM XML document (<node id lat lon>, <way><nd ref/><tag k v/></way>)
/// into an extract holding only ways tagged `highway`. Tag names pass through
/// unchanged; build_links interprets highway, oneway, maxspeed, lanes, name and town.
NetworkExtract osm_xml_to_extract(std::string_view xml);

/// One directed intersection-to-intersection road segment.
struct RoadLink {
    LinkId id;
    NodeId from = 0;
    NodeId to = 0;
    std::vector<geo::LatLon> geometry;
    double length_m = 0.0;

    std::string road_type;
    std::optional<bool> one_way;  ///< from tags; empty until imputed
    bool directed_edge = false;   ///< true when no opposite-direction twin exists
    std::optional<LinkId> reverse;
    std::optional<double> speed_limit_mph;
    std::optional<int> lanes;
    std::string name;
    std::string town;

    // Attributes joined from external inventories.
    std::string urban_type;
    std::string functional_class;
    std::optional<double> capacity_vph;
    std::optional<double> free_flow_speed_mph;
    std::optional<double> aadt;

    double grade = 0.0;
    bool grade_flagged = false;

    std::vector<WayId> source_ways;
    std::vector<NodeId> node_path;  ///< node ids along the geometry, from..to
};

struct BuildResult {
    std::vector<RoadLink> links;
    std::size_t dropped_zero_length = 0;
};

/// Splits ways at intersections and merges chains through pass-through nodes.
/// A node bounds a link when its incident edge count differs from two (dead
/// ends, crossings, junctions), or when the two incident edges carry different
/// modeling tags (highway, oneway, maxspeed, lanes, town, name) or
/// inconsistent one-way flow. Two-way chains produce two
/// directed links; link ids follow a canonical order independent of way order.
BuildResult build_links(const NetworkExtract& extract);

/// Serializes links back to an extract (one way per undirected link).
NetworkExtract links_to_extract(std::span<const RoadLink> links, const NetworkExtract& source);

// ---------------------------------------------------------------------------
// Elevation and grade

class ElevationSource {
public:
    virtual ~ElevationSource() = default;
    virtual std::optional<double> elevation_m(geo::LatLon p) const = 0;
    virtual std::string provenance() const = 0;
};

/// Nearest-neighbor lookup in a (lat, lon, elev_m) CSV grid. Lookups farther
/// than `max_snap_m` from every grid point fail.
class CsvGridElevation final : public ElevationSource {
public:
    static CsvGridElevation from_csv(std::string_view csv, std::string provenance, double max_snap_m = 500.0);

    std::optional<double> elevation_m(geo::LatLon p) const override;
    std::string provenance() const override { return provenance_; }
    std::size_t size() const { return points_.size(); }

private:
    struct Sample {
        geo::LatLon pos;
        double elev;
    };

    std::vector<Sample> points_;
    std::map<std::pair<long, long>, std::vector<std::size_t>> cells_;
    double cell_deg_ = 0.01;
    double max_snap_m_ = 500.0;
    std::string provenance_;
};

/// Client of an Open-Elevation compatible service. The transport receives the
/// JSON request body ({"locations": [{"latitude":..,"longitude":..}]}) and
/// returns the response body ({"results": [{"latitude","longitude","elevation"}]}).
class OpenElevationSource final : public ElevationSource {
public:
    using Transport = std::function<std::string(const std::string& request_body)>;

    OpenElevationSource(Transport transport, std::string endpoint);

    /// Fetches all points in one request and caches the answers.
    void prefetch(std::span<const geo::LatLon> points);

    std::optional<double> elevation_m(geo::LatLon p) const override;
    std::string provenance() const override { return endpoint_; }

    static std::string request_body(std::span<const geo::LatLon> points);
    /// Parses a response body; throws ParseError on shape violations.
    static std::vector<std::pair<geo::LatLon, double>> parse_response(std::string_view body);

private:
    Transport transport_;
    std::string endpoint_;
    mutable std::map<std::pair<double, double>, std::optional<double>> cache_;
};

struct GradeResult {
    double grade = 0.0;
    bool flagged = false;  ///< lookup failed or |grade| >= 1; grade set to 0
    std::string reason;
};

/// Grade = (elev(to) - elev(from)) / horizontal distance between the endpoints.
GradeResult compute_grade(const RoadLink& link, const ElevationSource& elevation);

struct GradeReport {
    std::size_t flagged = 0;
};

/// Applies compute_grade to every link in place.
GradeReport assign_grades(std::span<RoadLink> links, const ElevationSource& elevation);

// ---------------------------------------------------------------------------
// Attribute join

struct AttributeRecord {
    std::size_t row = 0;  ///< 1-based data row in the source document
    std::vector<geo::LatLon> geometry;
    std::string name;
    std::map<std::string, std::string> attributes;
};

struct RejectedRecord {
    std::size_t row = 0;
    std::string reason;
};

struct ParsedRecords {
    std::vector<AttributeRecord> records;
    std::vector<RejectedRecord> rejected;
};

/// Reads a CSV with a WKT `geometry` column (POINT or LINESTRING, lon lat
/// order), an optional `name` column and arbitrary attribute columns.
ParsedRecords parse_attribute_records(std::string_view csv);

/// Parses a WKT POINT or LINESTRING into lat/lon vertices.
std::vector<geo::LatLon> parse_wkt(std::string_view wkt);
std::string to_wkt(std::span<const geo::LatLon> line);

struct JoinParams {
    double gate_m = 25.0;
    double name_weight = 0.3;
};

struct JoinMatch {
    std::size_t row = 0;
    LinkId link;
    double score = 0.0;
    double mean_distance_m = 0.0;
};

struct JoinReport {
    std::vector<JoinMatch> matches;
    std::vector<std::size_t> unmatched;  ///< rows of records without a link in the gate
    std::vector<RejectedRecord> rejected;
};

/// Normalized similarity 1 - levenshtein / max length on case-folded names; 0
/// when either name is empty.
double name_similarity(std::string_view a, std::string_view b);

/// Mean perpendicular distance from the record's (densified) vertices to the link.
double mean_distance_m(std::span<const geo::LatLon> record, const RoadLink& link);

/// Attaches each record to the link with the highest blended score
/// (1 - w) * (1 - d/gate) + w * name_similarity, considering only links with
/// mean distance d <= gate; ties go to the smaller link id. Attributes are
/// written to the winning link and its opposite-direction twin.
JoinReport join_attributes(std::vector<RoadLink>& links, std::span<const AttributeRecord> records,
                           const JoinParams& params = {});

/// Applies one attribute map (aadt, capacity, free_flow_speed, urban_type,
/// functional_class, speed_limit, lanes, town) to a link.
void apply_attributes(RoadLink& link, const std::map<std::string, std::string>& attributes);

// ---------------------------------------------------------------------------
// Link table persistence

std::string write_links_csv(std::span<const RoadLink> links);
std::vector<RoadLink> read_links_csv(std::string_view csv);

const RoadLink& find_link(std::span<const RoadLink> links, LinkId id);

}  // namespace opmodenet::roadnet
