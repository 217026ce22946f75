#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace opmodenet::trajectory {

std::vector<LinkSecondRecord> attribute_seconds(const MatchedPiece& piece, const SmoothedSeries& series,
                                                const RoadNetwork& network, const std::string& segment_id) {
    std::vector<LinkSecondRecord> out;
    if (piece.route.empty()) return out;
    out.reserve(series.t.size());
    for (std::size_t i = 0; i < series.t.size(); ++i) {
        const double s = series.position_m[i];
        const auto it = std::upper_bound(piece.route_start.begin(), piece.route_start.end(), s);
        const std::size_t r = it == piece.route_start.begin() ? 0 : static_cast<std::size_t>(it - piece.route_start.begin()) - 1;
        const auto& link = network.links()[piece.route[r]];
        LinkSecondRecord rec;
        rec.link = link.id;
        rec.t = series.t[i];
        rec.speed_mph = series.speed_mps[i] * geo::kMpsToMph;
        rec.accel_mphps = series.accel_mps2[i] * geo::kMpsToMph;
        rec.grade = link.grade;
        rec.segment_id = segment_id;
        out.push_back(std::move(rec));
    }
    return out;
}

SegmentOutput process_segment(const TraceSegment& segment, const RoadNetwork& network, const TrajectoryParams& params) {
    SegmentOutput out;
    out.match = map_match(segment, network, params.match);
    if (out.match.rejected) return out;
    for (std::size_t p = 0; p < out.match.pieces.size(); ++p) {
        const auto& piece = out.match.pieces[p];
        std::vector<double> times;
        for (std::size_t idx : piece.point_indices) times.push_back(segment.points[idx].t);
        auto series = smooth(times, piece.positions, params.smooth);
        const bool too_fast = std::any_of(series.speed_mps.begin(), series.speed_mps.end(),
                                          [&](double v) { return v * geo::kMpsToMph > params.max_speed_mph; });
        if (too_fast) {
            ++out.pieces_over_speed;
            continue;
        }
        out.pieces_fallback += series.global_fallback;
        const std::string id = out.match.pieces.size() == 1 ? segment.id : segment.id + "." + std::to_string(p);
        auto recs = attribute_seconds(piece, series, network, id);
        out.records.insert(out.records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
        out.series.push_back(std::move(series));
    }
    return out;
}

std::vector<LinkCoverage> coverage(std::span<const LinkSecondRecord> records, const RoadNetwork& network,
                                   const CoverageFilter& filter) {
    std::map<roadnet::LinkId, std::pair<std::size_t, std::set<std::string>>> acc;
    for (const auto& r : records) {
        auto& a = acc[r.link];
        ++a.first;
        a.second.insert(r.segment_id);
    }
    std::vector<LinkCoverage> out;
    for (const auto& [id, a] : acc) {
        LinkCoverage c;
        c.link = id;
        c.seconds = a.first;
        c.segments = a.second.size();
        if (auto idx = network.index_of(id)) c.length_m = network.links()[*idx].length_m;
        c.retained = c.length_m > filter.min_length_m && static_cast<double>(c.seconds) > filter.min_seconds;
        out.push_back(c);
    }
    return out;
}

std::string window_of(double t, std::span<const TimeWindow> windows, double utc_offset_hours) {
    double hour = std::fmod((t / 3600.0) + utc_offset_hours, 24.0);
    if (hour < 0.0) hour += 24.0;
    for (const auto& w : windows) {
        const bool inside = w.start_hour <= w.end_hour ? (hour >= w.start_hour && hour < w.end_hour)
                                                       : (hour >= w.start_hour || hour < w.end_hour);
        if (inside) return w.name;
    }
    return {};
}

std::string write_link_seconds_csv(std::span<const LinkSecondRecord> records) {
    io::CsvWriter w({"link_id", "t", "speed_mph", "accel_mphps", "grade", "segment_id"});
    for (const auto& r : records) {
        w.field(static_cast<long long>(r.link.value)).field(r.t).field(r.speed_mph).field(r.accel_mphps).field(r.grade);
        w.field(r.segment_id);
        w.end_row();
    }
    return w.str();
}

std::vector<LinkSecondRecord> read_link_seconds_csv(std::string_view csv) {
    const auto t = io::parse_csv(csv);
    const auto c_id = t.require("link_id");
    const auto c_t = t.require("t");
    const auto c_v = t.require("speed_mph");
    const auto c_a = t.require("accel_mphps");
    const auto c_g = t.find("grade");
    const auto c_s = t.find("segment_id");
    std::vector<LinkSecondRecord> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "link-second row " + std::to_string(t.row_lines[r]);
        LinkSecondRecord rec;
        rec.link = roadnet::LinkId{static_cast<std::uint32_t>(io::parse_int(row[c_id], where))};
        rec.t = io::parse_double(row[c_t], where);
        rec.speed_mph = io::parse_double(row[c_v], where);
        rec.accel_mphps = io::parse_double(row[c_a], where);
        if (c_g) rec.grade = io::parse_double(row[*c_g], where);
        if (c_s) rec.segment_id = row[*c_s];
        if (rec.speed_mph < 0.0) throw ValidationError("negative speed", {where});
        out.push_back(std::move(rec));
    }
    return out;
}

std::string write_coverage_csv(std::span<const LinkCoverage> rows) {
    io::CsvWriter w({"link_id", "seconds", "segments", "length_m", "retained"});
    for (const auto& c : rows) {
        w.field(static_cast<long long>(c.link.value)).field(c.seconds).field(c.segments).field(c.length_m);
        w.field(c.retained ? 1 : 0);
        w.end_row();
    }
    return w.str();
}

}  // namespace opmodenet::trajectory
