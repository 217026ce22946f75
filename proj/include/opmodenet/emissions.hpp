#pragma once

#include "opmodenet/opmode.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opmodenet::emissions {

/// Pollutants every rate table must cover.
const std::vector<std::string>& required_pollutants();

struct EmissionRateTable {
    std::vector<std::string> pollutants;  ///< sorted
    std::map<std::string, std::array<double, opmode::kBinCount>> rates;  ///< g per vehicle-hour
    std::map<std::string, std::string> metadata;

    double rate(const std::string& pollutant, int bin_id) const;
};

struct LoadReport {
    std::vector<std::string> warnings;
};

/// Columns pollutant, bin_id, g_per_veh_hr; optional source, vehicle_class and
/// year columns become metadata. Duplicate (pollutant, bin) rows: the last
/// one wins and a warning is recorded. Missing pairs raise ValidationError
/// naming every gap; negative rates raise ValidationError.
EmissionRateTable load_rates(std::string_view csv, LoadReport* report = nullptr);
std::string write_rates_csv(const EmissionRateTable& table);

struct LinkEmissions {
    std::uint32_t link = 0;
    std::string town;
    double activity_veh_hr = 0.0;
    std::map<std::string, double> grams_per_hour;
};

/// Vehicle-hours on a link per hour: peak-hour flow times travel time.
double activity_vehicle_hours(double peak_hour_flow_vph, double travel_time_s);

/// grams/hr = activity * sum_b dist[b] * rate[p, b], for every pollutant.
LinkEmissions link_emissions(const opmode::OpModeDistribution& dist, double activity_veh_hr,
                             const EmissionRateTable& rates);

enum class Grouping { town, region };

struct GroupTotals {
    std::map<std::string, std::map<std::string, double>> groups;  ///< group -> pollutant -> g/hr
    std::map<std::string, double> total;
    std::size_t unassigned = 0;  ///< links without a town
};

/// Per-group sums, reduced in link-id order. Links without a town go to the
/// "unassigned" group. Region grouping uses `town_to_region` and falls back
/// to a single "region" group.
GroupTotals aggregate(std::span<const LinkEmissions> links, Grouping grouping,
                      const std::map<std::string, std::string>& town_to_region = {});

/// Columns link_id, town, pollutant, g_per_hr.
std::string write_link_emissions_csv(std::span<const LinkEmissions> links);
std::vector<LinkEmissions> read_link_emissions_csv(std::string_view csv);
/// Columns group, pollutant, g_per_hr; the grand total uses group "total".
std::string write_aggregate_csv(const GroupTotals& totals);

}  // namespace opmodenet::emissions
