#include "opmodenet/eval.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace opmodenet::eval {

using nlohmann::json;

namespace {

template <typename Map>
void check_aligned(const Map& a, const Map& b, const Map& c, const char* what) {
    std::vector<std::string> diff;
    auto collect = [&](const Map& x, const Map& y, const char* lhs, const char* rhs) {
        for (const auto& [id, _] : x)
            if (!y.count(id)) diff.push_back(std::to_string(id) + " (" + lhs + " not " + rhs + ")");
    };
    collect(a, c, "model", "truth");
    collect(c, a, "truth", "model");
    collect(b, c, "baseline", "truth");
    collect(c, b, "truth", "baseline");
    if (!diff.empty()) throw ValidationError(std::string("misaligned link sets in ") + what, diff);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json metrics_json(const Metrics& m) {
    return {{"n", m.n}, {"rmse", m.rmse}, {"r2", optional_json(m.r2)}, {"mape", optional_json(m.mape)},
            {"mape_excluded", m.mape_excluded}};
}

void opt_field(io::CsvWriter& w, const std::optional<double>& v) {
    if (v)
        w.field(*v);
    else
        w.field(std::string_view{});
}

}  // namespace

Metrics metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ShapeError("metrics: prediction and truth lengths differ");
    if (truth.size() < 2) throw ValidationError("metrics need at least 2 samples");
    Metrics m;
    m.n = truth.size();
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(m.n);
    double ss_res = 0.0, ss_tot = 0.0, ape = 0.0;
    std::size_t ape_n = 0;
    for (std::size_t i = 0; i < m.n; ++i) {
        const double r = pred[i] - truth[i];
        ss_res += r * r;
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
        if (std::abs(truth[i]) > kMapeEpsilon) {
            ape += std::abs(r) / std::abs(truth[i]);
            ++ape_n;
        } else {
            ++m.mape_excluded;
        }
    }
    m.rmse = std::sqrt(ss_res / static_cast<double>(m.n));
    if (ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
    if (ape_n) m.mape = 100.0 * ape / static_cast<double>(ape_n);
    return m;
}

std::optional<double> improvement(double baseline, double model) {
    if (baseline == 0.0) return std::nullopt;
    return (baseline - model) / baseline;
}

std::vector<BinComparison> per_bin_report(const Distributions& model, const Distributions& baseline,
                                          const Distributions& truth) {
    check_aligned(model, baseline, truth, "bin report");
    std::vector<BinComparison> out;
    for (std::size_t b = 0; b < opmode::kBinCount; ++b) {
        std::vector<double> pm, pb, t;
        for (const auto& [id, d] : truth) {
            t.push_back(d[b]);
            pm.push_back(model.at(id)[b]);
            pb.push_back(baseline.at(id)[b]);
        }
        BinComparison c;
        c.bin_id = opmode::kBinIds[b];
        c.model = metrics(pm, t);
        c.baseline = metrics(pb, t);
        c.rmse_improvement = improvement(c.baseline.rmse, c.model.rmse);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<PollutantComparison> per_pollutant_report(const Emissions& model, const Emissions& baseline,
                                                      const Emissions& truth) {
    check_aligned(model, baseline, truth, "pollutant report");
    std::vector<PollutantComparison> out;
    if (truth.empty()) return out;
    for (const auto& [pollutant, _] : truth.begin()->second.grams_per_hour) {
        std::vector<double> pm, pb, t;
        for (const auto& [id, e] : truth) {
            t.push_back(e.grams_per_hour.at(pollutant));
            pm.push_back(model.at(id).grams_per_hour.at(pollutant));
            pb.push_back(baseline.at(id).grams_per_hour.at(pollutant));
        }
        PollutantComparison c;
        c.pollutant = pollutant;
        c.model = metrics(pm, t);
        c.baseline = metrics(pb, t);
        c.rmse_improvement = improvement(c.baseline.rmse, c.model.rmse);
        if (c.model.mape && c.baseline.mape) c.mape_improvement = improvement(*c.baseline.mape, *c.model.mape);
        out.push_back(std::move(c));
    }
    return out;
}

std::string report_to_json(const ComparisonReport& report) {
    json j;
    j["links"] = report.links;
    json bins = json::array();
    for (const auto& b : report.bins)
        bins.push_back({{"bin_id", b.bin_id},
                        {"model", metrics_json(b.model)},
                        {"baseline", metrics_json(b.baseline)},
                        {"rmse_improvement", optional_json(b.rmse_improvement)}});
    j["bins"] = bins;
    json pols = json::array();
    for (const auto& p : report.pollutants)
        pols.push_back({{"pollutant", p.pollutant},
                        {"model", metrics_json(p.model)},
                        {"baseline", metrics_json(p.baseline)},
                        {"rmse_improvement", optional_json(p.rmse_improvement)},
                        {"mape_improvement", optional_json(p.mape_improvement)}});
    j["pollutants"] = pols;
    return j.dump(1) + "\n";
}

std::string bin_scatter_csv(const Distributions& model, const Distributions& baseline, const Distributions& truth) {
    check_aligned(model, baseline, truth, "bin scatter");
    io::CsvWriter w({"link_id", "bin_id", "truth", "model", "baseline"});
    for (std::size_t b = 0; b < opmode::kBinCount; ++b)
        for (const auto& [id, d] : truth) {
            w.field(static_cast<long long>(id)).field(opmode::kBinIds[b]).field(d[b]);
            w.field(model.at(id)[b]).field(baseline.at(id)[b]);
            w.end_row();
        }
    return w.str();
}

std::string pollutant_scatter_csv(const Emissions& model, const Emissions& baseline, const Emissions& truth) {
    check_aligned(model, baseline, truth, "pollutant scatter");
    io::CsvWriter w({"link_id", "pollutant", "truth", "model", "baseline"});
    for (const auto& [id, e] : truth)
        for (const auto& [p, g] : e.grams_per_hour) {
            w.field(static_cast<long long>(id)).field(p).field(g);
            w.field(model.at(id).grams_per_hour.at(p)).field(baseline.at(id).grams_per_hour.at(p));
            w.end_row();
        }
    return w.str();
}

std::string mape_bars_csv(std::span<const PollutantComparison> rows) {
    io::CsvWriter w({"pollutant", "model_mape", "baseline_mape"});
    for (const auto& r : rows) {
        w.field(r.pollutant);
        opt_field(w, r.model.mape);
        opt_field(w, r.baseline.mape);
        w.end_row();
    }
    return w.str();
}

std::string bin_rmse_csv(std::span<const BinComparison> rows) {
    io::CsvWriter w({"bin_id", "model_rmse", "baseline_rmse", "model_r2", "baseline_r2", "rmse_improvement"});
    for (const auto& r : rows) {
        w.field(r.bin_id).field(r.model.rmse).field(r.baseline.rmse);
        opt_field(w, r.model.r2);
        opt_field(w, r.baseline.r2);
        opt_field(w, r.rmse_improvement);
        w.end_row();
    }
    return w.str();
}

}  // namespace opmodenet::eval
