#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/opmode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace opmodenet::opmode {

namespace {

void validate_cycle(const DriveCycle& c) {
    if (c.speed_mph.size() < 60) throw ValidationError("drive cycle shorter than 60 s", {c.id});
    for (double v : c.speed_mph)
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("drive cycle has invalid speed", {c.id});
    const double mean = std::accumulate(c.speed_mph.begin(), c.speed_mph.end(), 0.0) / c.speed_mph.size();
    if (std::abs(mean - c.mean_speed_mph) > 0.1)
        throw ValidationError("drive cycle mean speed disagrees with its trace (" + io::format_double(mean) + " mph)",
                              {c.id});
}

}  // namespace

OpModeDistribution cycle_distribution(const DriveCycle& cycle, const BinTable& table, const VspCoefficients& coeffs) {
    std::vector<SecondSample> seconds(cycle.speed_mph.size());
    for (std::size_t i = 0; i < seconds.size(); ++i) {
        seconds[i].speed_mph = cycle.speed_mph[i];
        seconds[i].accel_mphps = i == 0 ? 0.0 : cycle.speed_mph[i] - cycle.speed_mph[i - 1];
    }
    const auto bins = classify_sequence(seconds, table, coeffs);
    return distribution(bins);
}

DriveCycleLibrary DriveCycleLibrary::from_cycles(std::vector<DriveCycle> cycles, const BinTable& table,
                                                 const VspCoefficients& coeffs) {
    DriveCycleLibrary lib;
    std::stable_sort(cycles.begin(), cycles.end(), [](const DriveCycle& a, const DriveCycle& b) {
        if (a.road_type != b.road_type) return a.road_type < b.road_type;
        return a.mean_speed_mph < b.mean_speed_mph;
    });
    for (auto& c : cycles) {
        validate_cycle(c);
        lib.distributions_.push_back(cycle_distribution(c, table, coeffs));
        lib.cycles_.push_back(std::move(c));
    }
    return lib;
}

DriveCycleLibrary DriveCycleLibrary::load(const std::filesystem::path& manifest, const BinTable& table,
                                          const VspCoefficients& coeffs) {
    const auto t = io::parse_csv(io::read_file(manifest));
    const auto c_id = t.require("cycle_id");
    const auto c_type = t.require("road_type");
    const auto c_mean = t.require("mean_speed");
    const auto c_file = t.find("file");
    const auto dir = manifest.parent_path();
    std::vector<DriveCycle> cycles;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        const std::string where = "cycle manifest line " + std::to_string(t.row_lines[r]);
        DriveCycle c;
        c.id = io::trim(row[c_id]);
        c.road_type = io::trim(row[c_type]);
        c.mean_speed_mph = io::parse_double(row[c_mean], where);
        const std::string file = c_file && !io::trim(row[*c_file]).empty() ? io::trim(row[*c_file]) : c.id + ".csv";
        const auto trace = io::parse_csv(io::read_file(dir / file));
        const auto c_t = trace.require("t");
        const auto c_v = trace.require("speed_mph");
        double prev_t = -1.0;
        for (std::size_t k = 0; k < trace.rows.size(); ++k) {
            const std::string w = file + " line " + std::to_string(trace.row_lines[k]);
            const double tt = io::parse_double(trace.rows[k][c_t], w);
            if (!(tt > prev_t)) throw ValidationError("drive cycle timestamps must increase", {w});
            prev_t = tt;
            c.speed_mph.push_back(io::parse_double(trace.rows[k][c_v], w));
        }
        cycles.push_back(std::move(c));
    }
    return from_cycles(std::move(cycles), table, coeffs);
}

OpModeDistribution DriveCycleLibrary::baseline(double avg_speed_mph, const std::string& road_type) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cycles_.size(); ++i)
        if (cycles_[i].road_type == road_type) idx.push_back(i);
    if (idx.empty()) throw ConfigError("no drive cycles for road type '" + road_type + "'");

    OpModeDistribution out;
    if (avg_speed_mph <= cycles_[idx.front()].mean_speed_mph) {
        out = distributions_[idx.front()];
    } else if (avg_speed_mph >= cycles_[idx.back()].mean_speed_mph) {
        out = distributions_[idx.back()];
    } else {
        std::size_t k = 0;
        while (cycles_[idx[k + 1]].mean_speed_mph < avg_speed_mph) ++k;
        const auto& lo = cycles_[idx[k]];
        const auto& hi = cycles_[idx[k + 1]];
        const double span = hi.mean_speed_mph - lo.mean_speed_mph;
        const double w = span > 0.0 ? (avg_speed_mph - lo.mean_speed_mph) / span : 0.0;
        double total = 0.0;
        for (std::size_t b = 0; b < kBinCount; ++b) {
            out[b] = (1.0 - w) * distributions_[idx[k]][b] + w * distributions_[idx[k + 1]][b];
            total += out[b];
        }
        for (auto& f : out.fractions) f /= total;
    }
    out.support_seconds = 0;
    return out;
}

OpModeDistribution baseline_from_avg_speed(double avg_speed_mph, const std::string& road_type,
                                           const DriveCycleLibrary& library) {
    return library.baseline(avg_speed_mph, road_type);
}

std::string cycle_family(std::string_view road_type) {
    std::string t(road_type);
    if (auto pos = t.find("_link"); pos != std::string::npos) t = t.substr(0, pos);
    return t == "motorway" || t == "trunk" ? "restricted" : "unrestricted";
}

}  // namespace opmodenet::opmode
