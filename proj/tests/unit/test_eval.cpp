#include <doctest.h>

#include "opmodenet/errors.hpp"
#include "opmodenet/eval.hpp"
#include "opmodenet/rng.hpp"
#include "opmodenet/synth.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

using namespace opmodenet;
using namespace opmodenet::eval;
using opmode::kBinCount;

namespace {

opmode::OpModeDistribution random_dist(Rng& rng) {
    opmode::OpModeDistribution d;
    double total = 0.0;
    for (std::size_t i = 0; i < kBinCount; ++i) total += d[i] = rng.uniform();
    for (auto& f : d.fractions) f /= total;
    return d;
}

opmode::OpModeDistribution uniform() {
    opmode::OpModeDistribution d;
    d.fractions.fill(1.0 / 23.0);
    return d;
}

struct Triple {
    Distributions model, baseline, truth;
};

Triple random_triple(std::uint64_t seed, std::uint32_t n) {
    Rng rng(seed);
    Triple t;
    for (std::uint32_t i = 0; i < n; ++i) {
        t.truth[i] = random_dist(rng);
        auto m = t.truth[i];
        for (auto& f : m.fractions) f = std::max(0.0, f + rng.normal(0.0, 0.005));
        t.model[i] = m;
        t.baseline[i] = random_dist(rng);
    }
    return t;
}

}  // namespace

TEST_CASE("metrics examples") {
    const std::vector<double> t{1.0, 2.0, 4.0};
    const auto perfect = metrics(t, t);
    CHECK(perfect.rmse == 0.0);
    CHECK(perfect.r2 == std::optional<double>(1.0));
    CHECK(perfect.mape == std::optional<double>(0.0));

    const std::vector<double> mean(3, 7.0 / 3.0);
    CHECK(*metrics(mean, t).r2 == doctest::Approx(0.0).scale(1.0));

    const std::vector<double> p2{2.0, 4.0}, t2{1.0, 2.0};
    const auto m = metrics(p2, t2);
    CHECK(*m.mape == doctest::Approx(100.0).epsilon(1e-15));
    CHECK(m.rmse == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
    CHECK(m.n == 2);
}

TEST_CASE("metrics edge cases") {
    const std::vector<double> flat{3.0, 3.0, 3.0}, p{2.0, 3.0, 4.0};
    const auto m = metrics(p, flat);
    CHECK_FALSE(m.r2.has_value());
    const std::vector<double> zeros{0.0, 0.0, 5.0};
    const auto z = metrics(p, zeros);
    CHECK(z.mape_excluded == 2);
    CHECK(*z.mape == doctest::Approx(20.0));
    const std::vector<double> all_zero{0.0, 0.0};
    CHECK_FALSE(metrics(std::vector<double>{1.0, 2.0}, all_zero).mape.has_value());
    CHECK_THROWS_AS(metrics(std::vector<double>{1.0}, std::vector<double>{1.0}), ValidationError);
    CHECK_THROWS_AS(metrics(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
    CHECK(improvement(2.0, 1.0) == std::optional<double>(0.5));
    CHECK_FALSE(improvement(0.0, 1.0).has_value());
}

TEST_CASE("property: metrics are permutation invariant and r2 is at most one") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::size_t> idx(20);
        std::vector<double> p(20), t(20);
        for (std::size_t i = 0; i < 20; ++i) {
            idx[i] = i;
            t[i] = rng.uniform(0.1, 10.0);
            p[i] = t[i] + rng.normal(0.0, 1.0);
        }
        rng.shuffle(std::span<std::size_t>(idx));
        std::vector<double> ps, ts;
        for (auto i : idx) {
            ps.push_back(p[i]);
            ts.push_back(t[i]);
        }
        const auto a = metrics(p, t), b = metrics(ps, ts);
        CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-12));
        CHECK(*a.r2 == doctest::Approx(*b.r2).epsilon(1e-12));
        CHECK(*a.mape == doctest::Approx(*b.mape).epsilon(1e-12));
        CHECK(*a.r2 < 1.0);
    }
}

TEST_CASE("per-bin report: identical model has zero error") {
    auto t = random_triple(2, 30);
    const auto rows = per_bin_report(t.truth, t.baseline, t.truth);
    REQUIRE(rows.size() == 23);
    for (const auto& r : rows) {
        CHECK(r.model.rmse == 0.0);
        CHECK(r.model.n == 30);
        CHECK(*r.rmse_improvement == 1.0);
    }
    CHECK(rows.front().bin_id == 0);
    CHECK(rows.back().bin_id == 40);
}

TEST_CASE("per-bin report: uniform model against always-one truth") {
    Distributions model, baseline, truth;
    for (std::uint32_t i = 0; i < 5; ++i) {
        opmode::OpModeDistribution d;
        d[opmode::bin_index(21)] = 1.0;
        truth[i] = d;
        model[i] = uniform();
        baseline[i] = d;
    }
    const auto rows = per_bin_report(model, baseline, truth);
    const auto& r = rows[opmode::bin_index(21)];
    CHECK(r.model.rmse == doctest::Approx(std::abs(1.0 / 23.0 - 1.0)).epsilon(1e-15));
    CHECK_FALSE(r.model.r2.has_value());
    CHECK(r.baseline.rmse == 0.0);
    CHECK(rows[0].model.rmse == doctest::Approx(1.0 / 23.0).epsilon(1e-15));
}

TEST_CASE("per-bin report: misaligned link sets list the difference") {
    auto t = random_triple(3, 6);
    t.model.erase(2);
    t.baseline[99] = uniform();
    try {
        per_bin_report(t.model, t.baseline, t.truth);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        REQUIRE(e.items().size() == 2);
        CHECK(e.items()[0].find("2 ") == 0);
        CHECK(e.items()[1].find("99 ") == 0);
    }
}

TEST_CASE("per-bin report matches an independent recomputation") {
    const auto t = random_triple(4, 40);
    const auto rows = per_bin_report(t.model, t.baseline, t.truth);
    for (std::size_t b = 0; b < kBinCount; ++b) {
        double se_m = 0.0, se_b = 0.0, mean = 0.0;
        for (const auto& [id, d] : t.truth) mean += d[b] / 40.0;
        double ss = 0.0;
        for (const auto& [id, d] : t.truth) {
            se_m += std::pow(t.model.at(id)[b] - d[b], 2);
            se_b += std::pow(t.baseline.at(id)[b] - d[b], 2);
            ss += std::pow(d[b] - mean, 2);
        }
        CHECK(rows[b].model.rmse == doctest::Approx(std::sqrt(se_m / 40.0)).epsilon(1e-12));
        CHECK(rows[b].baseline.rmse == doctest::Approx(std::sqrt(se_b / 40.0)).epsilon(1e-12));
        CHECK(*rows[b].model.r2 == doctest::Approx(1.0 - se_m / ss).epsilon(1e-12));
        // A lower model RMSE must show up as a positive improvement.
        CHECK((rows[b].model.rmse < rows[b].baseline.rmse) == (*rows[b].rmse_improvement > 0.0));
    }
}

TEST_CASE("pollutant report and outputs") {
    const auto t = random_triple(5, 12);
    const auto rates = synth::synthetic_rates();
    Emissions em, eb, et;
    for (const auto& [id, d] : t.truth) {
        et[id] = emissions::link_emissions(d, 2.0 + id, rates);
        em[id] = emissions::link_emissions(t.model.at(id), 2.0 + id, rates);
        eb[id] = emissions::link_emissions(t.baseline.at(id), 2.0 + id, rates);
    }
    const auto rows = per_pollutant_report(em, eb, et);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].pollutant == "CO");
    for (const auto& r : rows) {
        CHECK(r.model.mape.has_value());
        CHECK(*r.mape_improvement == doctest::Approx((*r.baseline.mape - *r.model.mape) / *r.baseline.mape));
    }

    ComparisonReport report{12, per_bin_report(t.model, t.baseline, t.truth), rows};
    const auto j = nlohmann::json::parse(report_to_json(report));
    CHECK(j["links"] == 12);
    CHECK(j["bins"].size() == 23);
    CHECK(j["pollutants"][0]["pollutant"] == "CO");

    const auto scatter = bin_scatter_csv(t.model, t.baseline, t.truth);
    CHECK(std::count(scatter.begin(), scatter.end(), '\n') == 1 + 23 * 12);
    CHECK(scatter.rfind("link_id,bin_id,truth,model,baseline\n", 0) == 0);
    const auto ps = pollutant_scatter_csv(em, eb, et);
    CHECK(std::count(ps.begin(), ps.end(), '\n') == 1 + 4 * 12);
    CHECK(mape_bars_csv(rows).rfind("pollutant,model_mape,baseline_mape\nCO,", 0) == 0);
    CHECK(bin_rmse_csv(report.bins).rfind("bin_id,model_rmse,baseline_rmse,model_r2,baseline_r2,rmse_improvement\n0,", 0) == 0);
}
