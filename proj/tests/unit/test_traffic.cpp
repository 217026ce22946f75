#include <doctest.h>

#include "opmodenet/errors.hpp"
#include "opmodenet/geo.hpp"
#include "opmodenet/rng.hpp"
#include "opmodenet/traffic.hpp"

#include <cmath>

using namespace opmodenet;
using namespace opmodenet::traffic;

namespace {

TrafficParams params(double k, double d) {
    TrafficParams p;
    p.k = k;
    p.d = d;
    return p;
}

bool rel_close(double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol * std::max(std::abs(b), 1e-300); }

roadnet::RoadLink link_of(double length_m) {
    roadnet::RoadLink l;
    l.id = {3};
    l.length_m = length_m;
    l.road_type = "primary";
    return l;
}

}  // namespace

TEST_CASE("peak hour flow") {
    CHECK(rel_close(peak_hour_flow(10000, params(0.1, 0.55)), 550.0));
    CHECK(peak_hour_flow(0, params(0.1, 0.55)) == 0.0);
    CHECK(rel_close(peak_hour_flow(24000, params(1.0 / 24.0, 0.5)), 500.0));
    CHECK_THROWS_AS(peak_hour_flow(-1, {}), DomainError);
}

TEST_CASE("bpr travel time") {
    const TrafficParams p;
    CHECK(rel_close(bpr_travel_time(80.0, 1500.0, 1500.0, p), 1.15 * 80.0));
    CHECK(bpr_travel_time(80.0, 0.0, 1500.0, p) == 80.0);
    CHECK(rel_close(bpr_travel_time(100.0, 500.0, 1000.0, p), 100.9375));
    CHECK_THROWS_AS(bpr_travel_time(100.0, 10.0, 0.0, p), DomainError);
    CHECK_THROWS_AS(bpr_travel_time(100.0, -1.0, 10.0, p), DomainError);
    CHECK_THROWS_AS(bpr_travel_time(0.0, 1.0, 10.0, p), DomainError);
}

TEST_CASE("congested speed") {
    CHECK(congested_speed(1609.34, 120.0, std::nullopt).mph == doctest::Approx(30.0).epsilon(1e-5));
    CHECK(congested_speed(804.67, 90.0, std::nullopt).mph == doctest::Approx(20.0).epsilon(1e-5));
    const auto capped = congested_speed(1609.34, 30.0, 25.0);
    CHECK(capped.capped);
    CHECK(capped.mph == 35.0);
    CHECK_FALSE(congested_speed(1609.34, 120.0, 25.0).capped);
}

TEST_CASE("free flow travel gives the free flow speed") {
    auto l = link_of(1200.0);
    l.free_flow_speed_mph = 45.0;
    l.capacity_vph = 1800.0;
    const auto s = derive_link_state(l, {});
    CHECK(s.travel_time_s == s.free_flow_time_s);
    CHECK(s.congested_speed_mph == doctest::Approx(45.0).epsilon(1e-12));
    CHECK(s.peak_hour_flow == 0.0);
}

TEST_CASE("params validation") {
    CHECK_NOTHROW(TrafficParams{}.validate());
    CHECK_THROWS_AS(params(0.0, 0.5).validate(), ConfigError);
    CHECK_THROWS_AS(params(0.1, 1.5).validate(), ConfigError);
    TrafficParams p;
    p.beta = 0.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = {};
    p.alpha = -0.1;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("missing inventory values are imputed") {
    InventoryDefaults d;
    auto l = link_of(500.0);
    l.functional_class = "3";
    l.lanes = 2;
    l.aadt = 10000;
    const auto s = derive_link_state(l, {}, d);
    CHECK(s.capacity_imputed);
    CHECK(s.capacity_vph == 2000.0);
    CHECK(s.free_flow_speed_imputed);
    CHECK(s.free_flow_speed_mph == 40.0);
    l.functional_class = "";
    l.road_type = "footway";
    const auto fallback = derive_link_state(l, {}, d);
    CHECK(fallback.capacity_vph == 1400.0);
    CHECK(fallback.free_flow_speed_mph == 30.0);
    l.speed_limit_mph = 35.0;
    CHECK(derive_link_state(l, {}, d).free_flow_speed_mph == 35.0);
}

TEST_CASE("derive_all counts imputations and missing AADT") {
    std::vector<roadnet::RoadLink> links{link_of(100), link_of(200)};
    links[1].id = {4};
    links[1].aadt = 5000;
    links[1].capacity_vph = 900;
    DeriveReport r;
    const auto states = derive_all(links, {}, {}, &r);
    CHECK(states.size() == 2);
    CHECK(r.missing_aadt == 1);
    CHECK(r.capacity_imputed == 1);
    CHECK(r.free_flow_imputed == 2);
}

TEST_CASE("traffic csv round trip") {
    std::vector<roadnet::RoadLink> links{link_of(317.25)};
    links[0].aadt = 7123;
    const auto states = derive_all(links, {}, {});
    const auto again = read_traffic_csv(write_traffic_csv(states));
    REQUIRE(again.size() == 1);
    CHECK(again.at({3}).travel_time_s == states.at({3}).travel_time_s);
    CHECK(write_traffic_csv(again) == write_traffic_csv(states));
}

TEST_CASE("property: bpr is monotone and continuous at zero volume") {
    Rng rng(11);
    const TrafficParams p;
    for (int i = 0; i < 500; ++i) {
        const double t0 = rng.uniform(1.0, 600.0);
        const double c = rng.uniform(100.0, 4000.0);
        const double v1 = rng.uniform(0.0, 2.0 * c);
        const double v2 = v1 + rng.uniform(0.0, c);
        CHECK(bpr_travel_time(t0, v2, c, p) >= bpr_travel_time(t0, v1, c, p));
        CHECK(bpr_travel_time(t0, v1, c, p) >= t0);
    }
    CHECK(bpr_travel_time(50.0, 1e-9, 1000.0, p) - 50.0 < 1e-12);
}

TEST_CASE("property: peak hour flow is linear in each factor") {
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        const double aadt = rng.uniform(0.0, 60000.0);
        const double k = rng.uniform(0.01, 0.5);
        const double d = rng.uniform(0.3, 1.0);
        const double s = rng.uniform(0.1, 1.0);
        const double base = peak_hour_flow(aadt, params(k, d));
        CHECK(rel_close(peak_hour_flow(aadt * 2, params(k, d)), 2 * base, 1e-12));
        CHECK(rel_close(peak_hour_flow(aadt, params(k * s, d)), s * base, 1e-12));
        CHECK(rel_close(peak_hour_flow(aadt, params(k, d * s)), s * base, 1e-12));
    }
}

TEST_CASE("property: congested speed never exceeds free flow speed") {
    Rng rng(13);
    for (int i = 0; i < 300; ++i) {
        auto l = link_of(rng.uniform(20.0, 3000.0));
        l.aadt = rng.uniform(0.0, 80000.0);
        l.capacity_vph = rng.uniform(300.0, 6000.0);
        l.free_flow_speed_mph = rng.uniform(10.0, 70.0);
        const auto s = derive_link_state(l, {});
        CHECK(s.travel_time_s >= s.free_flow_time_s);
        CHECK(s.congested_speed_mph <= *l.free_flow_speed_mph * (1 + 1e-12));
        CHECK(s.v_over_c >= 0.0);
        CHECK(s.congested_speed_mph == doctest::Approx(l.length_m / s.travel_time_s * geo::kMpsToMph).epsilon(1e-12));
    }
}
