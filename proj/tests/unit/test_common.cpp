#include <doctest.h>

#include "opmodenet/errors.hpp"
#include "opmodenet/geo.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/rng.hpp"

#include <cmath>
#include <limits>

using namespace opmodenet;

TEST_CASE("csv parses quotes, embedded commas and newlines") {
    const auto t = io::parse_csv("a,b,c\n1,\"x, y\",\"say \"\"hi\"\"\"\n\n2,\"two\nlines\",\n");
    REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][1] == "x, y");
    CHECK(t.rows[0][2] == "say \"hi\"");
    CHECK(t.rows[1][1] == "two\nlines");
    CHECK(t.rows[1][2] == "");
    CHECK(t.row_lines[0] == 2);
    CHECK(t.row_lines[1] == 4);
    CHECK(t.require("c") == 2);
    CHECK_FALSE(t.find("d").has_value());
    CHECK_THROWS_AS(t.require("d"), ParseError);
}

TEST_CASE("csv rejects ragged rows with the line number") {
    try {
        io::parse_csv("a,b\n1,2\n3\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(io::parse_csv("a\n\"open\n"), ParseError);
}

TEST_CASE("csv writer round trips through the parser") {
    io::CsvWriter w({"name", "value"});
    w.field("comma, here").field(0.1).end_row();
    w.field("quote \"q\"").field(static_cast<long long>(-7)).end_row();
    const auto t = io::parse_csv(w.str());
    CHECK(t.rows[0][0] == "comma, here");
    CHECK(io::parse_double(t.rows[0][1]) == 0.1);
    CHECK(t.rows[1][0] == "quote \"q\"");
    CHECK(io::parse_int(t.rows[1][1]) == -7);
}

TEST_CASE("format_double is shortest round trip") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 123456.789, 0.0}) CHECK(io::parse_double(io::format_double(v)) == v);
    CHECK(io::format_double(0.5) == "0.5");
    CHECK(io::format_double(3.0) == "3");
}

TEST_CASE("numeric parsing is strict") {
    CHECK_THROWS_AS(io::parse_double("1.5x"), ParseError);
    CHECK_THROWS_AS(io::parse_double(""), ParseError);
    CHECK_THROWS_AS(io::parse_int("4.0"), ParseError);
    CHECK(io::parse_double(" 2.25 ") == 2.25);
}

TEST_CASE("sha256 of known vectors") {
    CHECK(io::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("rng is reproducible and in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng r(1);
    double mean = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        const double z = r.normal();
        mean += z / n;
        sq += z * z / n;
    }
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(sq - 1.0) < 0.05);
    for (int i = 0; i < 1000; ++i) CHECK(r.uniform_index(7) < 7);
}

TEST_CASE("haversine matches a known distance") {
    // One degree of latitude on the 6371 km sphere.
    CHECK(geo::haversine_m({0.0, 0.0}, {1.0, 0.0}) == doctest::Approx(6371000.0 * M_PI / 180.0).epsilon(1e-12));
    CHECK(geo::haversine_m({42.0, -71.0}, {42.0, -71.0}) == 0.0);
}

TEST_CASE("local projection round trips and projects onto polylines") {
    const geo::LatLon origin{42.36, -71.06};
    const geo::LocalProjection proj(origin);
    const auto p = proj.to_latlon({120.0, -45.0});
    const auto back = proj.to_xy(p);
    CHECK(back.x == doctest::Approx(120.0).epsilon(1e-9));
    CHECK(back.y == doctest::Approx(-45.0).epsilon(1e-9));

    const std::vector<geo::LatLon> line{proj.to_latlon({0, 0}), proj.to_latlon({100, 0}), proj.to_latlon({100, 100})};
    const auto hit = geo::project_onto(line, proj.to_latlon({150, 50}), proj);
    CHECK(hit.segment == 1);
    CHECK(hit.distance_m == doctest::Approx(50.0).epsilon(1e-3));
    CHECK(hit.offset_m == doctest::Approx(150.0).epsilon(1e-3));
    const auto mid = geo::point_at(line, 150.0);
    CHECK(geo::haversine_m(mid, proj.to_latlon({100, 50})) < 0.01);
    CHECK(geo::point_at(line, 1e9) == line.back());
    CHECK(geo::polyline_length_m(line) == doctest::Approx(200.0).epsilon(1e-3));
}

TEST_CASE("trim and lower") {
    CHECK(io::trim("  a b \t\n") == "a b");
    CHECK(io::to_lower("Main ST") == "main st");
}
