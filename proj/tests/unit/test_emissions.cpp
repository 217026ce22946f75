#include <doctest.h>

#include "opmodenet/emissions.hpp"
#include "opmodenet/errors.hpp"
#include "opmodenet/rng.hpp"
#include "opmodenet/synth.hpp"

#include <algorithm>
#include <cmath>

using namespace opmodenet;
using namespace opmodenet::emissions;
using opmode::kBinCount;
using opmode::kBinIds;

namespace {

std::string rates_csv(double base = 1.0, std::string skip_pollutant = "", int skip_bin = -1) {
    std::string csv = "pollutant,bin_id,g_per_veh_hr,source\n";
    for (const auto& p : required_pollutants())
        for (std::size_t i = 0; i < kBinCount; ++i) {
            if (p == skip_pollutant && kBinIds[i] == skip_bin) continue;
            csv += p + "," + std::to_string(kBinIds[i]) + "," + std::to_string(base * (1 + i) * (p.size())) + ",test\n";
        }
    return csv;
}

opmode::OpModeDistribution random_dist(Rng& rng) {
    opmode::OpModeDistribution d;
    double total = 0.0;
    for (std::size_t i = 0; i < kBinCount; ++i) total += d[i] = rng.uniform();
    for (auto& f : d.fractions) f /= total;
    return d;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_CASE("load_rates: complete table") {
    const auto t = load_rates(rates_csv());
    std::size_t entries = 0;
    for (const auto& [p, r] : t.rates) entries += r.size();
    CHECK(entries == 92);
    CHECK(t.pollutants == std::vector<std::string>{"CO", "CO2", "NOx", "PM2.5"});
    CHECK(t.metadata.at("source") == "test");
    CHECK(t.rate("CO2", 1) == doctest::Approx(2.0 * 3.0));
    CHECK_THROWS_AS(t.rate("SO2", 1), ValidationError);
}

TEST_CASE("load_rates: a missing pair is named") {
    try {
        load_rates(rates_csv(1.0, "CO", 40));
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        REQUIRE(e.items().size() == 1);
        CHECK(e.items()[0] == "(CO, 40)");
    }
    try {
        load_rates("pollutant,bin_id,g_per_veh_hr\nCO,0,1\n");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.items().size() == 91);
    }
}

TEST_CASE("load_rates: duplicates keep the last row and warn") {
    LoadReport report;
    const auto t = load_rates(rates_csv() + "NOx,11,999,test\n", &report);
    CHECK(t.rate("NOx", 11) == 999.0);
    REQUIRE(report.warnings.size() == 1);
    CHECK(report.warnings[0].find("NOx bin 11") != std::string::npos);
}

TEST_CASE("load_rates: negative rates and unknown bins") {
    CHECK_THROWS_AS(load_rates(rates_csv() + "CO,1,-0.5,test\n"), ValidationError);
    CHECK_THROWS_AS(load_rates(rates_csv() + "CO,26,1,test\n"), ValidationError);
    CHECK_THROWS_AS(load_rates("pollutant,bin\nCO,1\n"), ParseError);
}

TEST_CASE("rates csv round trip") {
    const auto t = synth::synthetic_rates();
    const auto again = load_rates(write_rates_csv(t));
    CHECK(again.rates == t.rates);
    CHECK(again.metadata == t.metadata);
}

TEST_CASE("link_emissions examples") {
    const auto rates = load_rates(rates_csv());
    const auto zero = link_emissions(opmode::distribution(std::vector<int>{1, 11}), 0.0, rates);
    for (const auto& [p, g] : zero.grams_per_hour) CHECK(g == 0.0);

    auto table = rates;
    table.rates["CO2"][opmode::bin_index(1)] = 3000.0;
    opmode::OpModeDistribution idle;
    idle[opmode::bin_index(1)] = 1.0;
    CHECK(link_emissions(idle, 10.0, table).grams_per_hour.at("CO2") == 30000.0);
    CHECK_THROWS_AS(link_emissions(idle, -1.0, table), DomainError);
    CHECK(activity_vehicle_hours(360.0, 60.0) == 6.0);
}

TEST_CASE("link_emissions matches a per-bin accumulation") {
    Rng rng(1);
    const auto table = synth::synthetic_rates();
    for (int trial = 0; trial < 200; ++trial) {
        const auto d = random_dist(rng);
        const double activity = rng.uniform(0.0, 50.0);
        const auto e = link_emissions(d, activity, table);
        for (const auto& p : table.pollutants) {
            double grams = 0.0;
            for (std::size_t b = 0; b < kBinCount; ++b) grams += activity * d[b] * table.rate(p, kBinIds[b]);
            CHECK(rel_close(e.grams_per_hour.at(p), grams, 1e-9));
        }
    }
}

TEST_CASE("property: emissions are linear in activity and in the mixture") {
    Rng rng(2);
    const auto table = synth::synthetic_rates();
    for (int trial = 0; trial < 100; ++trial) {
        const auto d1 = random_dist(rng), d2 = random_dist(rng);
        const double lam = rng.uniform(), activity = rng.uniform(0.1, 30.0);
        opmode::OpModeDistribution mix;
        for (std::size_t b = 0; b < kBinCount; ++b) mix[b] = lam * d1[b] + (1.0 - lam) * d2[b];
        const auto e1 = link_emissions(d1, activity, table), e2 = link_emissions(d2, activity, table);
        const auto em = link_emissions(mix, activity, table);
        const auto e3 = link_emissions(d1, 3.0 * activity, table);
        for (const auto& p : table.pollutants) {
            CHECK(rel_close(em.grams_per_hour.at(p), lam * e1.grams_per_hour.at(p) + (1 - lam) * e2.grams_per_hour.at(p), 1e-9));
            CHECK(rel_close(e3.grams_per_hour.at(p), 3.0 * e1.grams_per_hour.at(p), 1e-12));
        }
    }
}

TEST_CASE("aggregate: 100 links in 3 towns against a tally") {
    Rng rng(3);
    const auto table = synth::synthetic_rates();
    std::vector<LinkEmissions> links;
    const std::vector<std::string> towns{"Ames", "Boone", "Clive"};
    std::map<std::string, std::map<std::string, double>> tally;
    for (std::uint32_t i = 0; i < 100; ++i) {
        auto e = link_emissions(random_dist(rng), rng.uniform(0.0, 20.0), table);
        e.link = i;
        e.town = towns[rng.uniform_index(3)];
        for (const auto& [p, g] : e.grams_per_hour) tally[e.town][p] += g;
        links.push_back(e);
    }
    const auto totals = aggregate(links, Grouping::town);
    CHECK(totals.groups.size() == 3);
    CHECK(totals.unassigned == 0);
    for (const auto& [town, per] : tally)
        for (const auto& [p, g] : per) CHECK(rel_close(totals.groups.at(town).at(p), g, 1e-12));
    for (const auto& p : table.pollutants) {
        double sum = 0.0;
        for (const auto& [town, per] : totals.groups) sum += per.at(p);
        CHECK(rel_close(totals.total.at(p), sum, 1e-15));
    }

    auto shuffled = links;
    rng.shuffle(std::span<LinkEmissions>(shuffled));
    const auto again = aggregate(shuffled, Grouping::town);
    CHECK(again.groups == totals.groups);
    CHECK(again.total == totals.total);

    const auto regions = aggregate(links, Grouping::region, {{"Ames", "North"}, {"Boone", "North"}});
    CHECK(regions.groups.size() == 2);
    for (const auto& p : table.pollutants)
        CHECK(rel_close(regions.groups.at("North").at(p), tally["Ames"][p] + tally["Boone"][p], 1e-12));
    CHECK(regions.groups.count("region") == 1);
}

TEST_CASE("aggregate: links without a town") {
    const auto table = synth::synthetic_rates();
    std::vector<LinkEmissions> links(2);
    links[0] = link_emissions(opmode::distribution(std::vector<int>{1}), 1.0, table);
    links[0].town = "A";
    links[1] = links[0];
    links[1].link = 1;
    links[1].town = "";
    const auto totals = aggregate(links, Grouping::town);
    CHECK(totals.unassigned == 1);
    CHECK(totals.groups.count("unassigned") == 1);
}

TEST_CASE("link emissions csv round trip") {
    const auto table = synth::synthetic_rates();
    std::vector<LinkEmissions> links(2);
    Rng rng(4);
    for (std::uint32_t i = 0; i < 2; ++i) {
        links[i] = link_emissions(random_dist(rng), 2.5, table);
        links[i].link = 10 + i;
        links[i].town = i ? "B, Upper" : "A";
    }
    const auto back = read_link_emissions_csv(write_link_emissions_csv(links));
    REQUIRE(back.size() == 2);
    CHECK(back[1].town == "B, Upper");
    CHECK(back[0].grams_per_hour == links[0].grams_per_hour);
    const auto agg = write_aggregate_csv(aggregate(links, Grouping::town));
    CHECK(agg.rfind("group,pollutant,g_per_hr\n", 0) == 0);
    CHECK(agg.find("\ntotal,CO,") != std::string::npos);
}
