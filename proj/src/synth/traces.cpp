#include "opmodenet/errors.hpp"
#include "opmodenet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace opmodenet::synth {

namespace {

constexpr double kDt = 0.1;
constexpr int kStepsPerSecond = 10;
constexpr double kComfortDecel = 1.2;
constexpr double kMaxDecel = 4.5;
constexpr double kStopLine = 15.0;  // stops happen this far short of the node

struct Sample {
    double s;
    double v;
    double a;
};

std::vector<std::size_t> random_route(std::span<const roadnet::RoadLink> links,
                                      const std::map<roadnet::NodeId, std::vector<std::size_t>>& out, double min_length,
                                      Rng& rng) {
    std::vector<std::size_t> route{static_cast<std::size_t>(rng.uniform_index(links.size()))};
    double total = links[route[0]].length_m;
    while (total < min_length) {
        const auto& cur = links[route.back()];
        auto it = out.find(cur.to);
        if (it == out.end() || it->second.empty()) break;
        std::vector<std::size_t> options;
        for (std::size_t j : it->second)
            if (!(cur.reverse && links[j].id == *cur.reverse)) options.push_back(j);
        if (options.empty()) options = it->second;
        route.push_back(options[rng.uniform_index(options.size())]);
        total += links[route.back()].length_m;
    }
    return route;
}

}  // namespace

std::vector<SyntheticTrace> generate_traces(std::span<const roadnet::RoadLink> links, const TraceSpec& spec, Rng& rng) {
    if (links.empty()) throw ConfigError("cannot generate traces without links");
    if (!(spec.min_interval_s > 0.0) || spec.max_interval_s < spec.min_interval_s)
        throw ConfigError("trace sampling intervals must satisfy 0 < min <= max");
    if (!(spec.duration_s >= 2.0)) throw ConfigError("trace duration must be at least 2 s");

    std::map<roadnet::NodeId, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < links.size(); ++i) out[links[i].from].push_back(i);

    const auto seconds = static_cast<std::size_t>(std::floor(spec.duration_s));
    std::vector<SyntheticTrace> traces;
    for (std::size_t n = 0; n < spec.count; ++n) {
        const auto route = random_route(links, out, 30.0 * spec.duration_s + 500.0, rng);
        std::vector<double> start{0.0};
        std::vector<double> target;
        std::vector<bool> stop_at_end;
        for (std::size_t k = 0; k < route.size(); ++k) {
            const auto& l = links[route[k]];
            start.push_back(start.back() + l.length_m);
            target.push_back(l.speed_limit_mph.value_or(25.0) / geo::kMpsToMph * rng.uniform(0.7, 1.0));
            stop_at_end.push_back(k + 1 < route.size() && rng.bernoulli(spec.stop_probability));
        }
        auto link_at = [&](double s) {
            auto it = std::upper_bound(start.begin(), start.end() - 1, s);
            return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - start.begin() - 1));
        };

        // Kinematics on a 0.1 s grid.
        std::vector<Sample> fine;
        double s = rng.uniform(0.0, 0.5) * links[route[0]].length_m;
        double v = target[0] * rng.uniform(0.3, 1.0);
        double dwell = 0.0;
        std::size_t next_stop = 0;
        const std::size_t steps = seconds * kStepsPerSecond;
        for (std::size_t i = 0; i <= steps; ++i) {
            const std::size_t k = std::min(link_at(s), route.size() - 1);
            if (next_stop < k) next_stop = k;
            while (next_stop < route.size() && (!stop_at_end[next_stop] || start[next_stop + 1] - kStopLine < s - 1e-9)) ++next_stop;

            double a;
            if (dwell > 0.0) {
                a = 0.0;
                v = 0.0;
                dwell -= kDt;
            } else {
                a = std::clamp(0.5 * (target[k] - v), -2.5, 1.8);
                if (next_stop < route.size()) {
                    const double dist = start[next_stop + 1] - kStopLine - s;
                    if (dist < 0.5 && v < 0.3) {
                        a = 0.0;
                        v = 0.0;
                        dwell = rng.uniform(3.0, 20.0);
                        stop_at_end[next_stop] = false;
                    } else {
                        const double need = v * v / (2.0 * std::max(dist, 0.01));
                        if (need >= kComfortDecel) a = -std::min(need, kMaxDecel);
                    }
                }
            }
            fine.push_back({s, v, a});
            const double v_next = std::max(0.0, v + a * kDt);
            // Time to reach zero speed when braking within the step.
            if (v + a * kDt < 0.0 && a < 0.0) {
                s += v * v / (-2.0 * a);
            } else {
                s += 0.5 * (v + v_next) * kDt;
            }
            v = v_next;
            if (s > start.back() - 1e-6) s = start.back() - 1e-6;
        }

        SyntheticTrace tr;
        char id[32];
        std::snprintf(id, sizeof id, "synth-%03zu", n);
        tr.raw.id = id;
        tr.raw.device_meta = "synthetic";
        for (std::size_t k : route) tr.route.push_back(links[k].id);
        const double t0 = spec.start_epoch_s + std::floor(rng.uniform(0.0, spec.start_spread_s));
        for (std::size_t i = 0; i <= seconds; ++i) {
            const auto& f = fine[i * kStepsPerSecond];
            tr.seconds.push_back({t0 + static_cast<double>(i), links[route[link_at(f.s)]].id, f.s, f.v, f.a});
        }

        double t = 0.0;
        while (t <= static_cast<double>(seconds)) {
            const double x = t / kDt;
            const auto i = std::min(static_cast<std::size_t>(std::floor(x)), steps);
            const double w = std::min(1.0, x - static_cast<double>(i));
            const double pos = i < steps ? fine[i].s + w * (fine[i + 1].s - fine[i].s) : fine[steps].s;
            const std::size_t k = link_at(pos);
            const auto& link = links[route[k]];
            const geo::LatLon on = geo::point_at(link.geometry, pos - start[k]);
            const geo::LocalProjection proj(on);
            const geo::LatLon noisy = proj.to_latlon({rng.normal(0.0, spec.noise_m), rng.normal(0.0, spec.noise_m)});
            tr.raw.points.push_back({t0 + t, spec.noise_m > 0.0 ? noisy : on});
            tr.point_links.push_back(link.id);
            t += std::round(rng.uniform(spec.min_interval_s, spec.max_interval_s) * 1000.0) / 1000.0;
        }
        traces.push_back(std::move(tr));
    }
    return traces;
}

std::map<std::uint32_t, opmode::OpModeDistribution> true_distributions(std::span<const SyntheticTrace> traces,
                                                                       std::span<const roadnet::RoadLink> links,
                                                                       const opmode::BinTable& table,
                                                                       const opmode::VspCoefficients& coeffs) {
    std::map<roadnet::LinkId, double> grade;
    for (const auto& l : links) grade[l.id] = l.grade;
    std::map<std::uint32_t, std::vector<int>> bins;
    for (const auto& tr : traces) {
        std::vector<opmode::SecondSample> seq;
        for (const auto& s : tr.seconds)
            seq.push_back({s.speed_mps * geo::kMpsToMph, s.accel_mps2 * geo::kMpsToMph, grade.at(s.link)});
        const auto classified = opmode::classify_sequence(seq, table, coeffs);
        for (std::size_t i = 0; i < classified.size(); ++i) bins[tr.seconds[i].link.value].push_back(classified[i]);
    }
    std::map<std::uint32_t, opmode::OpModeDistribution> out;
    for (const auto& [id, b] : bins) out[id] = opmode::distribution(b);
    return out;
}

}  // namespace opmodenet::synth
