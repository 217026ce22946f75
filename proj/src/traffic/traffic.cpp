#include "opmodenet/traffic.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/geo.hpp"
#include "opmodenet/io.hpp"

#include <cmath>

namespace opmodenet::traffic {

void TrafficParams::validate() const {
    if (!(k > 0.0 && k <= 1.0)) throw ConfigError("traffic.K must lie in (0, 1]");
    if (!(d > 0.0 && d <= 1.0)) throw ConfigError("traffic.D must lie in (0, 1]");
    if (!(alpha >= 0.0)) throw ConfigError("traffic.alpha must be >= 0");
    if (!(beta >= 1.0)) throw ConfigError("traffic.beta must be >= 1");
}

double peak_hour_flow(double aadt, const TrafficParams& params) {
    if (!(aadt >= 0.0)) throw DomainError("AADT must be non-negative");
    return aadt * params.k * params.d;
}

double bpr_travel_time(double free_flow_time_s, double volume_vph, double capacity_vph, const TrafficParams& params) {
    if (!(capacity_vph > 0.0)) throw DomainError("capacity must be positive");
    if (!(free_flow_time_s > 0.0)) throw DomainError("free-flow time must be positive");
    if (!(volume_vph >= 0.0)) throw DomainError("volume must be non-negative");
    const double ratio = volume_vph / capacity_vph;
    return free_flow_time_s * (1.0 + params.alpha * std::pow(ratio, params.beta));
}

CongestedSpeed congested_speed(double length_m, double travel_time_s, std::optional<double> speed_limit_mph,
                               double cap_margin_mph) {
    if (!(travel_time_s > 0.0)) throw DomainError("travel time must be positive");
    CongestedSpeed out{length_m / travel_time_s * geo::kMpsToMph, false};
    if (speed_limit_mph && out.mph > *speed_limit_mph + cap_margin_mph) {
        out.mph = *speed_limit_mph + cap_margin_mph;
        out.capped = true;
    }
    return out;
}

double InventoryDefaults::capacity(const roadnet::RoadLink& link) const {
    const int lanes = link.lanes.value_or(1);
    auto it = capacity_per_lane_by_class.find(link.functional_class);
    const double per_lane = it == capacity_per_lane_by_class.end() ? capacity_per_lane_fallback : it->second;
    return per_lane * lanes;
}

double InventoryDefaults::free_flow_speed(const roadnet::RoadLink& link) const {
    if (link.speed_limit_mph) return *link.speed_limit_mph;
    std::string type = link.road_type;
    if (auto pos = type.find("_link"); pos != std::string::npos) type = type.substr(0, pos);
    auto it = free_flow_speed_by_road_type.find(type);
    return it == free_flow_speed_by_road_type.end() ? free_flow_speed_fallback : it->second;
}

LinkTrafficState derive_link_state(const roadnet::RoadLink& link, const TrafficParams& params,
                                   const InventoryDefaults& defaults) {
    LinkTrafficState s;
    s.capacity_imputed = !link.capacity_vph.has_value();
    s.capacity_vph = link.capacity_vph.value_or(defaults.capacity(link));
    s.free_flow_speed_imputed = !link.free_flow_speed_mph.has_value();
    s.free_flow_speed_mph = link.free_flow_speed_mph.value_or(defaults.free_flow_speed(link));
    if (!(s.free_flow_speed_mph > 0.0)) throw ValidationError("non-positive free-flow speed", {std::to_string(link.id.value)});
    s.peak_hour_flow = peak_hour_flow(link.aadt.value_or(0.0), params);
    s.free_flow_time_s = link.length_m / (s.free_flow_speed_mph / geo::kMpsToMph);
    s.travel_time_s = bpr_travel_time(s.free_flow_time_s, s.peak_hour_flow, s.capacity_vph, params);
    s.v_over_c = s.peak_hour_flow / s.capacity_vph;
    const auto speed = congested_speed(link.length_m, s.travel_time_s, link.speed_limit_mph);
    s.congested_speed_mph = speed.mph;
    s.speed_capped = speed.capped;
    return s;
}

std::map<roadnet::LinkId, LinkTrafficState> derive_all(std::span<const roadnet::RoadLink> links,
                                                       const TrafficParams& params, const InventoryDefaults& defaults,
                                                       DeriveReport* report) {
    params.validate();
    std::map<roadnet::LinkId, LinkTrafficState> out;
    DeriveReport r;
    for (const auto& link : links) {
        const auto s = derive_link_state(link, params, defaults);
        r.capacity_imputed += s.capacity_imputed;
        r.free_flow_imputed += s.free_flow_speed_imputed;
        r.speed_capped += s.speed_capped;
        r.missing_aadt += !link.aadt.has_value();
        out.emplace(link.id, s);
    }
    if (report) *report = r;
    return out;
}

std::string write_traffic_csv(const std::map<roadnet::LinkId, LinkTrafficState>& states) {
    io::CsvWriter w({"link_id", "peak_hour_flow", "free_flow_time_s", "travel_time_s", "congested_speed_mph",
                     "v_over_c", "capacity_vph", "free_flow_speed_mph", "speed_capped"});
    for (const auto& [id, s] : states) {
        w.field(static_cast<long long>(id.value))
            .field(s.peak_hour_flow)
            .field(s.free_flow_time_s)
            .field(s.travel_time_s)
            .field(s.congested_speed_mph)
            .field(s.v_over_c)
            .field(s.capacity_vph)
            .field(s.free_flow_speed_mph)
            .field(s.speed_capped ? 1 : 0);
        w.end_row();
    }
    return w.str();
}

std::map<roadnet::LinkId, LinkTrafficState> read_traffic_csv(std::string_view csv) {
    const auto t = io::parse_csv(csv);
    const auto c_id = t.require("link_id");
    const auto c_flow = t.require("peak_hour_flow");
    const auto c_t0 = t.require("free_flow_time_s");
    const auto c_ta = t.require("travel_time_s");
    const auto c_speed = t.require("congested_speed_mph");
    const auto c_vc = t.require("v_over_c");
    const auto c_cap = t.require("capacity_vph");
    const auto c_ffs = t.require("free_flow_speed_mph");
    const auto c_capped = t.require("speed_capped");
    std::map<roadnet::LinkId, LinkTrafficState> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "traffic row " + std::to_string(t.row_lines[r]);
        LinkTrafficState s;
        s.peak_hour_flow = io::parse_double(row[c_flow], where);
        s.free_flow_time_s = io::parse_double(row[c_t0], where);
        s.travel_time_s = io::parse_double(row[c_ta], where);
        s.congested_speed_mph = io::parse_double(row[c_speed], where);
        s.v_over_c = io::parse_double(row[c_vc], where);
        s.capacity_vph = io::parse_double(row[c_cap], where);
        s.free_flow_speed_mph = io::parse_double(row[c_ffs], where);
        s.speed_capped = row[c_capped] == "1";
        out.emplace(roadnet::LinkId{static_cast<std::uint32_t>(io::parse_int(row[c_id], where))}, s);
    }
    return out;
}

}  // namespace opmodenet::traffic
