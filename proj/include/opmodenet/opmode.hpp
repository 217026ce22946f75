#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opmodenet::opmode {

inline constexpr std::size_t kBinCount = 23;

/// Canonical running-exhaust operating-mode bins, in output order.
inline constexpr std::array<int, kBinCount> kBinIds = {0,  1,  11, 12, 13, 14, 15, 16, 21, 22, 23, 24,
                                                       25, 27, 28, 29, 30, 33, 35, 37, 38, 39, 40};

/// Output widths of the braking/idle, low-, moderate- and high-speed groups.
inline constexpr std::array<std::size_t, 4> kGroupSizes = {2, 6, 9, 6};

/// Position of a bin id in kBinIds; throws ValidationError for unknown ids.
std::size_t bin_index(int bin_id);

struct VspCoefficients {
    double a = 0.156461;   ///< rolling term, kW s/m
    double b = 0.002002;   ///< rotating term, kW s^2/m^2
    double c = 0.000493;   ///< aerodynamic term, kW s^3/m^3
    double mass = 1.4788;  ///< metric tons
    double g = 9.81;       ///< m/s^2

    /// Light-duty passenger car defaults.
    static VspCoefficients light_duty() { return {}; }
    void validate() const;
};

/// Vehicle-specific power in kW/tonne:
/// (A v + B v^2 + C v^3) / mass + v (accel + g grade).
double vsp(double speed_mps, double accel_mps2, double grade, const VspCoefficients& coeffs);

struct BinRule {
    int bin_id = 0;
    std::optional<double> speed_lo, speed_hi;  ///< mph, [lo, hi)
    std::optional<double> vsp_lo, vsp_hi;      ///< kW/tonne, [lo, hi)
    std::string special;                       ///< "braking", "idle" or empty
};

/// Deceleration thresholds of the braking rule (mph/s).
struct BrakingRule {
    double hard_decel = -2.0;       ///< accel <= this is braking
    double sustained_decel = -1.0;  ///< accel < this for `window` seconds is braking
    std::size_t window = 3;
};

/// Operating-mode bin table. Rows are evaluated in file order for special
/// rules; range rows partition (speed, VSP) space.
class BinTable {
public:
    /// Columns: bin_id, speed_lo, speed_hi, vsp_lo, vsp_hi, special_rule.
    /// Empty bounds are unbounded. Every canonical bin must appear exactly once.
    static BinTable parse_csv(std::string_view csv, BrakingRule braking = {});
    /// The bundled table.
    static const BinTable& standard();

    /// Bin for one second. `previous_accels` holds the preceding seconds'
    /// accelerations (oldest first) of the same continuous trajectory.
    int classify(double speed_mph, double accel_mphps, std::span<const double> previous_accels, double vsp) const;

    const std::vector<BinRule>& rules() const { return rules_; }
    const BrakingRule& braking() const { return braking_; }

private:
    struct SpeedClass {
        double lo, hi;
        std::vector<double> vsp_upper;  ///< ascending upper bounds; last is +inf
        std::vector<int> bins;
    };

    std::vector<BinRule> rules_;
    BrakingRule braking_;
    std::optional<int> braking_bin_;
    std::optional<int> idle_bin_;
    double idle_speed_hi_ = 1.0;
    std::vector<SpeedClass> classes_;  ///< sorted by speed
};

struct OpModeDistribution {
    std::array<double, kBinCount> fractions{};
    std::size_t support_seconds = 0;  ///< 0 marks a model prediction

    double operator[](std::size_t i) const { return fractions[i]; }
    double& operator[](std::size_t i) { return fractions[i]; }
    /// Fraction for a bin id.
    double at_bin(int bin_id) const { return fractions[bin_index(bin_id)]; }
};

/// Share of seconds in each bin. Throws ValidationError on empty input.
OpModeDistribution distribution(std::span<const int> bins);

struct SecondSample {
    double speed_mph = 0.0;
    double accel_mphps = 0.0;
    double grade = 0.0;
};

/// Classifies a continuous second-by-second sequence, carrying deceleration
/// history across seconds.
std::vector<int> classify_sequence(std::span<const SecondSample> seconds, const BinTable& table,
                                   const VspCoefficients& coeffs);

// ---------------------------------------------------------------------------
// Drive-cycle baseline

struct DriveCycle {
    std::string id;
    std::string road_type;
    std::vector<double> speed_mph;  ///< one value per second
    double mean_speed_mph = 0.0;
};

/// Distribution of a cycle on flat ground; accelerations are backward
/// differences and the first second has zero acceleration.
OpModeDistribution cycle_distribution(const DriveCycle& cycle, const BinTable& table, const VspCoefficients& coeffs);

class DriveCycleLibrary {
public:
    /// Reads a manifest CSV (cycle_id, road_type, mean_speed[, file]) and one
    /// CSV (t, speed_mph) per cycle in `directory`, named <cycle_id>.csv by default.
    static DriveCycleLibrary load(const std::filesystem::path& manifest, const BinTable& table,
                                  const VspCoefficients& coeffs);
    static DriveCycleLibrary from_cycles(std::vector<DriveCycle> cycles, const BinTable& table,
                                         const VspCoefficients& coeffs);

    /// Interpolated distribution at `avg_speed_mph` using the two cycles of
    /// `road_type` bracketing it by mean speed; clamps outside the range.
    OpModeDistribution baseline(double avg_speed_mph, const std::string& road_type) const;

    const std::vector<DriveCycle>& cycles() const { return cycles_; }
    const OpModeDistribution& distribution_of(std::size_t cycle_index) const { return distributions_[cycle_index]; }

private:
    std::vector<DriveCycle> cycles_;
    std::vector<OpModeDistribution> distributions_;
};

/// Convenience wrapper for the library lookup.
OpModeDistribution baseline_from_avg_speed(double avg_speed_mph, const std::string& road_type,
                                           const DriveCycleLibrary& library);

/// Maps a link road type (OSM highway class) to a drive-cycle family:
/// motorway/trunk and their ramps are "restricted", everything else "unrestricted".
std::string cycle_family(std::string_view road_type);

// ---------------------------------------------------------------------------
// Persistence: link_id, support_seconds, b0, b1, b11, ... b40

/// Column names b0 ... b40 in canonical order.
std::vector<std::string> distribution_columns();
std::string write_distributions_csv(const std::map<std::uint32_t, OpModeDistribution>& dists);
std::map<std::uint32_t, OpModeDistribution> read_distributions_csv(std::string_view csv);

}  // namespace opmodenet::opmode
