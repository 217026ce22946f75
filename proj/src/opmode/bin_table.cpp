#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/opmode.hpp"

#include "bin_table_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace opmodenet::opmode {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::optional<double> bound(const std::string& s, const std::string& where) {
    if (io::trim(s).empty()) return std::nullopt;
    return io::parse_double(s, where);
}

}  // namespace

std::size_t bin_index(int bin_id) {
    const auto it = std::find(kBinIds.begin(), kBinIds.end(), bin_id);
    if (it == kBinIds.end()) throw ValidationError("unknown operating-mode bin", {std::to_string(bin_id)});
    return static_cast<std::size_t>(it - kBinIds.begin());
}

BinTable BinTable::parse_csv(std::string_view csv, BrakingRule braking) {
    const auto t = io::parse_csv(csv);
    const auto c_id = t.require("bin_id");
    const auto c_slo = t.require("speed_lo");
    const auto c_shi = t.require("speed_hi");
    const auto c_vlo = t.require("vsp_lo");
    const auto c_vhi = t.require("vsp_hi");
    const auto c_rule = t.require("special_rule");

    BinTable table;
    table.braking_ = braking;
    std::set<int> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "bin table line " + std::to_string(t.row_lines[r]);
        BinRule rule;
        rule.bin_id = static_cast<int>(io::parse_int(row[c_id], where));
        bin_index(rule.bin_id);
        if (!seen.insert(rule.bin_id).second) throw ValidationError("duplicate bin in table", {std::to_string(rule.bin_id)});
        rule.speed_lo = bound(row[c_slo], where);
        rule.speed_hi = bound(row[c_shi], where);
        rule.vsp_lo = bound(row[c_vlo], where);
        rule.vsp_hi = bound(row[c_vhi], where);
        rule.special = io::to_lower(io::trim(row[c_rule]));
        if (rule.special == "braking") {
            table.braking_bin_ = rule.bin_id;
        } else if (rule.special == "idle") {
            table.idle_bin_ = rule.bin_id;
            table.idle_speed_hi_ = rule.speed_hi.value_or(1.0);
        } else if (!rule.special.empty()) {
            throw ValidationError("unknown special rule '" + rule.special + "'", {where});
        }
        table.rules_.push_back(rule);
    }
    std::vector<std::string> missing;
    for (int id : kBinIds)
        if (!seen.count(id)) missing.push_back(std::to_string(id));
    if (!missing.empty()) throw ValidationError("bin table is missing bins", missing);

    // Group the range rows into speed classes and check each class tiles the
    // VSP axis without gaps or overlaps.
    std::map<std::pair<double, double>, std::vector<const BinRule*>> by_speed;
    for (const auto& rule : table.rules_) {
        if (!rule.special.empty()) continue;
        by_speed[{rule.speed_lo.value_or(-kInf), rule.speed_hi.value_or(kInf)}].push_back(&rule);
    }
    double expected_lo = table.idle_speed_hi_;
    for (auto& [range, rows] : by_speed) {
        if (range.first != expected_lo)
            throw ValidationError("bin table speed classes leave a gap", {"speed " + io::format_double(range.first)});
        expected_lo = range.second;
        std::sort(rows.begin(), rows.end(), [](const BinRule* a, const BinRule* b) {
            return a->vsp_lo.value_or(-kInf) < b->vsp_lo.value_or(-kInf);
        });
        SpeedClass cls{range.first, range.second, {}, {}};
        double prev_hi = -kInf;
        for (const BinRule* row : rows) {
            if (row->vsp_lo.value_or(-kInf) != prev_hi)
                throw ValidationError("bin table VSP ranges leave a gap", {std::to_string(row->bin_id)});
            prev_hi = row->vsp_hi.value_or(kInf);
            cls.vsp_upper.push_back(prev_hi);
            cls.bins.push_back(row->bin_id);
        }
        if (prev_hi != kInf) throw ValidationError("bin table VSP ranges are bounded above", {io::format_double(range.first)});
        table.classes_.push_back(std::move(cls));
    }
    if (expected_lo != kInf) throw ValidationError("bin table speed classes are bounded above");
    if (!table.braking_bin_ || !table.idle_bin_) throw ValidationError("bin table needs braking and idle rows");
    return table;
}

const BinTable& BinTable::standard() {
    static const BinTable table = parse_csv(detail::kStandardBinTableCsv);
    return table;
}

int BinTable::classify(double speed_mph, double accel_mphps, std::span<const double> previous_accels,
                       double vsp_value) const {
    if (accel_mphps <= braking_.hard_decel) return *braking_bin_;
    if (braking_.window > 0 && previous_accels.size() + 1 >= braking_.window) {
        bool sustained = accel_mphps < braking_.sustained_decel;
        for (std::size_t k = 1; sustained && k < braking_.window; ++k)
            sustained = previous_accels[previous_accels.size() - k] < braking_.sustained_decel;
        if (sustained) return *braking_bin_;
    }
    if (speed_mph < idle_speed_hi_) return *idle_bin_;
    auto cls = std::upper_bound(classes_.begin(), classes_.end(), speed_mph,
                                [](double s, const SpeedClass& c) { return s < c.hi; });
    if (cls == classes_.end()) cls = std::prev(classes_.end());
    const auto pos = std::upper_bound(cls->vsp_upper.begin(), cls->vsp_upper.end(), vsp_value) - cls->vsp_upper.begin();
    return cls->bins[std::min<std::size_t>(pos, cls->bins.size() - 1)];
}

void VspCoefficients::validate() const {
    if (!(mass > 0.0)) throw ConfigError("vsp.mass must be > 0");
    if (!(a >= 0.0 && b >= 0.0 && c >= 0.0)) throw ConfigError("vsp coefficients must be >= 0");
}

double vsp(double speed_mps, double accel_mps2, double grade, const VspCoefficients& k) {
    const double v = speed_mps;
    return (k.a * v + k.b * v * v + k.c * v * v * v) / k.mass + v * (accel_mps2 + k.g * grade);
}

OpModeDistribution distribution(std::span<const int> bins) {
    if (bins.empty()) throw ValidationError("operating-mode distribution of zero seconds");
    std::array<std::size_t, kBinCount> counts{};
    for (int b : bins) ++counts[bin_index(b)];
    OpModeDistribution d;
    d.support_seconds = bins.size();
    for (std::size_t i = 0; i < kBinCount; ++i)
        d.fractions[i] = static_cast<double>(counts[i]) / static_cast<double>(bins.size());
    return d;
}

std::vector<int> classify_sequence(std::span<const SecondSample> seconds, const BinTable& table,
                                   const VspCoefficients& coeffs) {
    constexpr double kMphToMps = 0.44704;
    std::vector<double> accels;
    accels.reserve(seconds.size());
    std::vector<int> out;
    out.reserve(seconds.size());
    for (const auto& s : seconds) {
        const double p = vsp(s.speed_mph * kMphToMps, s.accel_mphps * kMphToMps, s.grade, coeffs);
        out.push_back(table.classify(s.speed_mph, s.accel_mphps, accels, p));
        accels.push_back(s.accel_mphps);
    }
    return out;
}

std::vector<std::string> distribution_columns() {
    std::vector<std::string> cols;
    for (int id : kBinIds) cols.push_back("b" + std::to_string(id));
    return cols;
}

std::string write_distributions_csv(const std::map<std::uint32_t, OpModeDistribution>& dists) {
    std::vector<std::string> header{"link_id", "support_seconds"};
    for (auto& c : distribution_columns()) header.push_back(c);
    io::CsvWriter w(header);
    for (const auto& [id, d] : dists) {
        w.field(static_cast<long long>(id)).field(d.support_seconds);
        for (double f : d.fractions) w.field(f);
        w.end_row();
    }
    return w.str();
}

std::map<std::uint32_t, OpModeDistribution> read_distributions_csv(std::string_view csv) {
    const auto t = io::parse_csv(csv);
    const auto c_id = t.require("link_id");
    const auto c_support = t.require("support_seconds");
    std::vector<std::size_t> cols;
    for (auto& c : distribution_columns()) cols.push_back(t.require(c));
    std::map<std::uint32_t, OpModeDistribution> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "distribution row " + std::to_string(t.row_lines[r]);
        OpModeDistribution d;
        d.support_seconds = static_cast<std::size_t>(io::parse_int(row[c_support], where));
        for (std::size_t i = 0; i < kBinCount; ++i) d.fractions[i] = io::parse_double(row[cols[i]], where);
        out[static_cast<std::uint32_t>(io::parse_int(row[c_id], where))] = d;
    }
    return out;
}

}  // namespace opmodenet::opmode
