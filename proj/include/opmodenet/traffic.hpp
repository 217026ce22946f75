#pragma once

#include "opmodenet/roadnet.hpp"

#include <map>
#include <optional>
#include <string>

namespace opmodenet::traffic {

struct TrafficParams {
    double k = 0.09;  ///< share of daily traffic in the peak hour
    double d = 0.55;  ///< directional split
    double alpha = 0.15;
    double beta = 4.0;

    /// Throws ConfigError unless 0 < K <= 1, 0 < D <= 1, alpha >= 0, beta >= 1.
    void validate() const;
};

/// AADT * K * D, in vehicles per hour.
double peak_hour_flow(double aadt, const TrafficParams& params);

/// BPR volume-delay: t0 * (1 + alpha * (v / c)^beta).
double bpr_travel_time(double free_flow_time_s, double volume_vph, double capacity_vph, const TrafficParams& params);

struct CongestedSpeed {
    double mph = 0.0;
    bool capped = false;
};

/// length / travel time in mph, capped at limit + margin when a limit exists.
CongestedSpeed congested_speed(double length_m, double travel_time_s, std::optional<double> speed_limit_mph,
                               double cap_margin_mph = 10.0);

struct LinkTrafficState {
    double peak_hour_flow = 0.0;    ///< veh/hr
    double free_flow_time_s = 0.0;  ///< t0
    double travel_time_s = 0.0;     ///< t_a
    double congested_speed_mph = 0.0;
    double v_over_c = 0.0;
    double capacity_vph = 0.0;
    double free_flow_speed_mph = 0.0;
    bool speed_capped = false;
    bool capacity_imputed = false;
    bool free_flow_speed_imputed = false;
};

/// Per-lane hourly capacity by functional class, used when a link lacks a
/// capacity attribute, plus free-flow speed fallbacks by road type.
struct InventoryDefaults {
    std::map<std::string, double> capacity_per_lane_by_class{
        {"1", 2000.0}, {"2", 1900.0}, {"3", 1000.0}, {"4", 900.0}, {"5", 800.0}, {"6", 700.0}, {"7", 600.0}};
    double capacity_per_lane_fallback = 700.0;
    std::map<std::string, double> free_flow_speed_by_road_type{
        {"motorway", 65.0}, {"trunk", 55.0}, {"primary", 40.0}, {"secondary", 35.0},
        {"tertiary", 30.0}, {"residential", 25.0}, {"unclassified", 25.0}};
    double free_flow_speed_fallback = 30.0;

    double capacity(const roadnet::RoadLink& link) const;
    double free_flow_speed(const roadnet::RoadLink& link) const;
};

struct DeriveReport {
    std::size_t capacity_imputed = 0;
    std::size_t free_flow_imputed = 0;
    std::size_t speed_capped = 0;
    std::size_t missing_aadt = 0;
};

/// Peak-hour flow, BPR travel time and congested speed for one link. Missing
/// capacity and free-flow speed come from `defaults`; missing AADT is treated
/// as zero flow and counted.
LinkTrafficState derive_link_state(const roadnet::RoadLink& link, const TrafficParams& params,
                                   const InventoryDefaults& defaults = {});

std::map<roadnet::LinkId, LinkTrafficState> derive_all(std::span<const roadnet::RoadLink> links,
                                                       const TrafficParams& params, const InventoryDefaults& defaults,
                                                       DeriveReport* report = nullptr);

std::string write_traffic_csv(const std::map<roadnet::LinkId, LinkTrafficState>& states);
std::map<roadnet::LinkId, LinkTrafficState> read_traffic_csv(std::string_view csv);

}  // namespace opmodenet::traffic
