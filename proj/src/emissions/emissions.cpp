#include "opmodenet/emissions.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>

namespace opmodenet::emissions {

const std::vector<std::string>& required_pollutants() {
    static const std::vector<std::string> p = {"CO", "CO2", "NOx", "PM2.5"};
    return p;
}

double EmissionRateTable::rate(const std::string& pollutant, int bin_id) const {
    auto it = rates.find(pollutant);
    if (it == rates.end()) throw ValidationError("rate table has no pollutant", {pollutant});
    return it->second[opmode::bin_index(bin_id)];
}

EmissionRateTable load_rates(std::string_view csv, LoadReport* report) {
    const auto t = io::parse_csv(csv);
    const auto c_p = t.require("pollutant");
    const auto c_b = t.require("bin_id");
    const auto c_r = t.require("g_per_veh_hr");
    std::map<std::string, std::array<std::optional<double>, opmode::kBinCount>> seen;
    EmissionRateTable table;
    for (const char* key : {"source", "vehicle_class", "year"})
        if (auto c = t.find(key); c && !t.rows.empty()) table.metadata[key] = io::trim(t.rows.front()[*c]);

    std::vector<std::string> negative;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "rates line " + std::to_string(t.row_lines[r]);
        const std::string pollutant = io::trim(row[c_p]);
        const int bin = static_cast<int>(io::parse_int(row[c_b], where));
        const double rate = io::parse_double(row[c_r], where);
        if (!(rate >= 0.0) || !std::isfinite(rate)) negative.push_back(pollutant + "/" + std::to_string(bin));
        auto& slot = seen[pollutant][opmode::bin_index(bin)];
        if (slot && report) report->warnings.push_back("duplicate rate for " + pollutant + " bin " + std::to_string(bin) + " (" + where + " wins)");
        slot = rate;
    }
    if (!negative.empty()) throw ValidationError("negative emission rates", negative);

    std::vector<std::string> missing;
    std::set<std::string> names;
    for (const auto& [p, _] : seen) names.insert(p);
    for (const auto& p : required_pollutants()) names.insert(p);
    for (const auto& p : names) {
        auto it = seen.find(p);
        for (std::size_t i = 0; i < opmode::kBinCount; ++i)
            if (it == seen.end() || !it->second[i]) missing.push_back("(" + p + ", " + std::to_string(opmode::kBinIds[i]) + ")");
    }
    if (!missing.empty()) throw ValidationError("rate table is missing (pollutant, bin) pairs", missing);

    for (const auto& [p, values] : seen) {
        table.pollutants.push_back(p);
        auto& out = table.rates[p];
        for (std::size_t i = 0; i < opmode::kBinCount; ++i) out[i] = *values[i];
    }
    return table;
}

std::string write_rates_csv(const EmissionRateTable& table) {
    std::vector<std::string> header = {"pollutant", "bin_id", "g_per_veh_hr"};
    std::vector<std::string> meta;
    for (const char* key : {"source", "vehicle_class", "year"})
        if (table.metadata.count(key)) meta.push_back(key);
    header.insert(header.end(), meta.begin(), meta.end());
    io::CsvWriter w(header);
    for (const auto& p : table.pollutants) {
        const auto& r = table.rates.at(p);
        for (std::size_t i = 0; i < opmode::kBinCount; ++i) {
            w.field(p).field(opmode::kBinIds[i]).field(r[i]);
            for (const auto& m : meta) w.field(table.metadata.at(m));
            w.end_row();
        }
    }
    return w.str();
}

double activity_vehicle_hours(double peak_hour_flow_vph, double travel_time_s) {
    if (!(peak_hour_flow_vph >= 0.0) || !(travel_time_s >= 0.0)) throw DomainError("activity inputs must be >= 0");
    return peak_hour_flow_vph * travel_time_s / 3600.0;
}

LinkEmissions link_emissions(const opmode::OpModeDistribution& dist, double activity, const EmissionRateTable& rates) {
    if (!(activity >= 0.0)) throw DomainError("activity must be >= 0");
    LinkEmissions out;
    out.activity_veh_hr = activity;
    for (const auto& p : rates.pollutants) {
        const auto& r = rates.rates.at(p);
        double per_veh_hr = 0.0;
        for (std::size_t i = 0; i < opmode::kBinCount; ++i) per_veh_hr += dist[i] * r[i];
        out.grams_per_hour[p] = activity * per_veh_hr;
    }
    return out;
}

GroupTotals aggregate(std::span<const LinkEmissions> links, Grouping grouping,
                      const std::map<std::string, std::string>& town_to_region) {
    std::vector<const LinkEmissions*> sorted;
    for (const auto& l : links) sorted.push_back(&l);
    std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->link < b->link; });
    GroupTotals out;
    for (const auto* l : sorted) {
        std::string group;
        if (l->town.empty()) {
            group = "unassigned";
            ++out.unassigned;
        } else if (grouping == Grouping::town) {
            group = l->town;
        } else {
            auto it = town_to_region.find(l->town);
            group = it == town_to_region.end() ? "region" : it->second;
        }
        for (const auto& [p, g] : l->grams_per_hour) out.groups[group][p] += g;
    }
    for (const auto& [group, per] : out.groups)
        for (const auto& [p, g] : per) out.total[p] += g;
    return out;
}

std::string write_link_emissions_csv(std::span<const LinkEmissions> links) {
    io::CsvWriter w({"link_id", "town", "pollutant", "g_per_hr"});
    for (const auto& l : links)
        for (const auto& [p, g] : l.grams_per_hour) {
            w.field(static_cast<long long>(l.link)).field(l.town).field(p).field(g);
            w.end_row();
        }
    return w.str();
}

std::vector<LinkEmissions> read_link_emissions_csv(std::string_view csv) {
    const auto t = io::parse_csv(csv);
    const auto c_id = t.require("link_id");
    const auto c_town = t.require("town");
    const auto c_p = t.require("pollutant");
    const auto c_g = t.require("g_per_hr");
    std::map<std::uint32_t, LinkEmissions> by_link;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "emissions line " + std::to_string(t.row_lines[r]);
        const auto id = static_cast<std::uint32_t>(io::parse_int(row[c_id], where));
        auto& l = by_link[id];
        l.link = id;
        l.town = row[c_town];
        l.grams_per_hour[io::trim(row[c_p])] = io::parse_double(row[c_g], where);
    }
    std::vector<LinkEmissions> out;
    for (auto& [id, l] : by_link) out.push_back(std::move(l));
    return out;
}

std::string write_aggregate_csv(const GroupTotals& totals) {
    io::CsvWriter w({"group", "pollutant", "g_per_hr"});
    for (const auto& [group, per] : totals.groups)
        for (const auto& [p, g] : per) {
            w.field(group).field(p).field(g);
            w.end_row();
        }
    for (const auto& [p, g] : totals.total) {
        w.field(std::string_view("total")).field(p).field(g);
        w.end_row();
    }
    return w.str();
}

}  // namespace opmodenet::emissions
