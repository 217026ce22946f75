#include <doctest.h>

#include "oracles.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/features.hpp"
#include "opmodenet/rng.hpp"
#include "opmodenet/synth.hpp"

#include <cmath>
#include <set>

using namespace opmodenet;
using namespace opmodenet::features;

namespace {

TownEmbedding town(std::string id, double fill) {
    return {std::move(id), std::vector<double>(kEmbeddingDim, fill)};
}

std::vector<std::vector<double>> rows_of(const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
    return out;
}

roadnet::RoadLink sample_link(Rng& rng, std::uint32_t id, const std::string& type, const std::string& town_id) {
    roadnet::RoadLink l;
    l.id = {id};
    l.road_type = type;
    l.town = town_id;
    l.length_m = rng.uniform(60.0, 900.0);
    l.lanes = 1 + static_cast<int>(rng.uniform_index(3));
    if (rng.bernoulli(0.7)) l.speed_limit_mph = 25.0 + 5.0 * static_cast<double>(rng.uniform_index(5));
    if (rng.bernoulli(0.8)) l.aadt = rng.uniform(1000.0, 30000.0);
    l.grade = rng.uniform(-0.05, 0.05);
    l.urban_type = rng.bernoulli(0.5) ? "urban" : "suburban";
    l.functional_class = std::to_string(3 + rng.uniform_index(3));
    l.directed_edge = rng.bernoulli(0.2);
    return l;
}

struct Dataset {
    std::vector<roadnet::RoadLink> links;
    std::vector<traffic::LinkTrafficState> states;
    std::vector<TownEmbedding> towns;
};

Dataset dataset(std::uint64_t seed, std::size_t n = 200) {
    Rng rng(seed);
    Dataset d;
    const std::vector<std::string> names{"A", "B", "C", "D"};
    d.towns = synth::embeddings(names, rng);
    const std::vector<std::string> types{"primary", "secondary", "residential"};
    for (std::size_t i = 0; i < n; ++i) {
        d.links.push_back(sample_link(rng, static_cast<std::uint32_t>(i), types[i % 3], names[i % 4]));
        d.states.push_back(traffic::derive_link_state(d.links.back(), {}));
    }
    return d;
}

const TownEmbedding* embedding_for(const Dataset& d, const std::string& town_id) {
    for (const auto& t : d.towns)
        if (t.town_id == town_id) return &t;
    return nullptr;
}

}  // namespace

TEST_CASE("embeddings csv contract") {
    std::vector<TownEmbedding> rows{town("Alpha", 0.25), town("Beta, North", -1.5)};
    rows[0].values[511] = 7.0;
    const auto csv = write_embeddings_csv(rows);
    CHECK(csv.rfind("town_id,v0,v1,", 0) == 0);
    CHECK(csv.find(",v511\n") != std::string::npos);
    const auto back = read_embeddings_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[0].values.size() == 512);
    CHECK(back[0].values[511] == 7.0);
    CHECK(back[1].town_id == "Beta, North");

    CHECK_THROWS_AS(read_embeddings_csv("town_id,v0,v1\nA,1,2\n"), ParseError);
    std::string extra = csv;
    extra.replace(extra.find('\n'), 1, ",v512\n");
    CHECK_THROWS(read_embeddings_csv(extra));
    CHECK_THROWS_AS(read_embeddings_csv(csv + csv.substr(csv.find('\n') + 1)), ValidationError);
    std::string bad = csv;
    bad.replace(bad.find("0.25"), 4, "oops");
    CHECK_THROWS_AS(read_embeddings_csv(bad), ParseError);
    std::vector<TownEmbedding> short_row{{"x", {1.0, 2.0}}};
    CHECK_THROWS_AS(write_embeddings_csv(short_row), ShapeError);
}

TEST_CASE("impute examples") {
    roadnet::RoadLink a, b, c;
    a.road_type = b.road_type = c.road_type = "residential";
    a.speed_limit_mph = 25.0;
    b.speed_limit_mph = 30.0;
    const std::vector<roadnet::RoadLink> train{a, b};
    const auto stats = fit_imputation(train);
    CHECK(stats.speed_limit_by_road_type.at("residential") == 27.5);

    c.directed_edge = true;
    ImputeReport r;
    const auto filled = impute(c, stats, &r);
    CHECK(filled.speed_limit_mph == std::optional<double>(27.5));
    CHECK(filled.one_way == std::optional<bool>(true));
    CHECK(r.one_way == 1);
    CHECK(r.speed_limit == 1);

    roadnet::RoadLink full = a;
    full.one_way = false;
    ImputeReport none;
    const auto same = impute(full, stats, &none);
    CHECK(same.speed_limit_mph == full.speed_limit_mph);
    CHECK(same.one_way == full.one_way);
    CHECK(none.one_way + none.speed_limit == 0);

    roadnet::RoadLink odd;
    odd.road_type = "track";
    ImputeReport g;
    CHECK(impute(odd, stats, &g).speed_limit_mph == std::optional<double>(27.5));
    CHECK(g.speed_limit_global == 1);
}

TEST_CASE("pca: rank one plus tiny noise keeps one component") {
    Rng rng(1);
    Eigen::MatrixXd x(12, 512);
    Eigen::VectorXd dir(512);
    for (int j = 0; j < 512; ++j) dir(j) = rng.normal();
    for (int i = 0; i < 12; ++i) {
        const double s = rng.normal(0.0, 5.0);
        for (int j = 0; j < 512; ++j) x(i, j) = 3.0 + s * dir(j) + rng.normal(0.0, 1e-3);
    }
    const auto p = fit_pca(x, 0.95);
    CHECK(p.k() == 1);
    CHECK(p.components.row(0).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pca: eigenvalues and k agree with a Jacobi oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd x(60, 10);
        for (int i = 0; i < 60; ++i)
            for (int j = 0; j < 10; ++j) x(i, j) = rng.normal(0.0, 1.0 + 0.03 * j);
        const auto ev = oracle::jacobi_eigenvalues(oracle::covariance(rows_of(x)));
        const auto p = fit_pca(x, 0.95);
        REQUIRE(p.explained_variance.size() == ev.size());
        for (std::size_t i = 0; i < ev.size(); ++i) CHECK(std::abs(p.explained_variance[i] - ev[i]) <= 1e-9 * ev[0]);
        CHECK(p.k() == oracle::components_for(ev, 0.95));
        CHECK(p.k() >= 8);
        const Eigen::MatrixXd g = p.components * p.components.transpose();
        CHECK((g - Eigen::MatrixXd::Identity(p.k(), p.k())).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("pca: full variance target gives the rank") {
    Rng rng(3);
    Eigen::MatrixXd basis(3, 20);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 20; ++j) basis(i, j) = rng.normal();
    Eigen::MatrixXd coeff(15, 3);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 3; ++j) coeff(i, j) = rng.normal();
    const Eigen::MatrixXd x = coeff * basis;
    CHECK(fit_pca(x, 1.0).k() == 3);
}

TEST_CASE("pca: degenerate input is an error") {
    Eigen::MatrixXd same = Eigen::MatrixXd::Constant(4, 512, 0.5);
    CHECK_THROWS_AS(fit_pca(same, 0.95), DomainError);
    CHECK_THROWS_AS(fit_pca(Eigen::MatrixXd::Zero(1, 5), 0.95), ValidationError);
    CHECK_THROWS_AS(fit_pca(Eigen::MatrixXd::Random(4, 5), 0.0), ConfigError);
}

TEST_CASE("property: retained components hold the target variance") {
    Rng rng(4);
    std::vector<std::string> names;
    for (int i = 0; i < 9; ++i) names.push_back("T" + std::to_string(i));
    const auto towns = synth::embeddings(names, rng);
    Eigen::MatrixXd x(9, 512);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 512; ++j) x(i, j) = towns[i].values[j];
    const auto p = fit_pca(x, 0.95);
    const Eigen::MatrixXd centered = x.rowwise() - p.mean.transpose();
    const double total = centered.squaredNorm();
    const double kept = (centered * p.components.transpose()).squaredNorm();
    CHECK(kept / total >= 0.95 - 1e-12);
    double ev_sum = 0.0;
    for (double e : p.explained_variance) ev_sum += e;
    CHECK(total / 8.0 == doctest::Approx(ev_sum).epsilon(1e-10));
    const auto cum = p.cumulative_ratio();
    CHECK(cum[p.k() - 1] >= 0.95 - 1e-12);
    if (p.k() > 1) CHECK(cum[p.k() - 2] < 0.95);
}

TEST_CASE("encode: standardization, one-hot and other slot") {
    const auto d = dataset(5);
    const auto enc = fit_encoder(d.links, d.states, d.towns);
    CHECK(enc.pca_towns == std::vector<std::string>{"A", "B", "C", "D"});
    CHECK(enc.columns().size() == enc.dim());

    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < d.links.size(); ++i)
        rows.push_back(encode(d.links[i], d.states[i], embedding_for(d, d.links[i].town), enc));
    for (std::size_t c = 0; c < enc.numeric.size(); ++c) {
        double m = 0.0, v = 0.0;
        for (const auto& r : rows) m += r[c] / rows.size();
        for (const auto& r : rows) v += (r[c] - m) * (r[c] - m) / rows.size();
        CHECK(std::abs(m) <= 1e-9);
        CHECK(std::abs(v - 1.0) <= 1e-6);
    }

    const auto cols = enc.columns();
    auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(cols.begin(), cols.end(), name) - cols.begin());
    };
    roadnet::RoadLink l = d.links[0];
    l.road_type = "motorway";
    EncodeReport rep;
    const auto x = encode(l, d.states[0], embedding_for(d, l.town), enc, &rep);
    CHECK(x[col("road_type=other")] == 1.0);
    CHECK(x[col("road_type=primary")] == 0.0);
    CHECK(rep.out_of_vocabulary == 1);

    roadnet::RoadLink m = d.links[0];
    m.road_type = "secondary";
    const auto y = encode(m, d.states[0], embedding_for(d, m.town), enc);
    CHECK(y[col("road_type=secondary")] == 1.0);
    CHECK(y[col("road_type=other")] == 0.0);
    CHECK(y[col("road_type=primary")] + y[col("road_type=residential")] == 0.0);
}

TEST_CASE("encode: feature at the training mean encodes as zero") {
    const auto d = dataset(6);
    const auto enc = fit_encoder(d.links, d.states, d.towns);
    roadnet::RoadLink l = d.links[0];
    traffic::LinkTrafficState s = d.states[0];
    const auto pos = static_cast<std::size_t>(std::find(enc.numeric.begin(), enc.numeric.end(), "length_m") -
                                              enc.numeric.begin());
    l.length_m = enc.mean[pos];
    CHECK(encode(l, s, nullptr, enc)[pos] == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("encode: missing embedding encodes as the PCA mean") {
    const auto d = dataset(7);
    const auto enc = fit_encoder(d.links, d.states, d.towns);
    EncodeReport rep;
    const auto x = encode(d.links[0], d.states[0], nullptr, enc, &rep);
    CHECK(rep.missing_embedding == 1);
    TownEmbedding mean_town{"M", std::vector<double>(enc.pca->mean.data(), enc.pca->mean.data() + 512)};
    const auto y = encode(d.links[0], d.states[0], &mean_town, enc);
    for (std::size_t i = x.size() - enc.pca->k(); i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) <= 1e-9);
}

TEST_CASE("encoder: constant columns are dropped") {
    auto d = dataset(8);
    for (auto& l : d.links) l.grade = 0.0;
    const auto enc = fit_encoder(d.links, d.states, d.towns);
    CHECK(std::find(enc.dropped.begin(), enc.dropped.end(), "grade") != enc.dropped.end());
    CHECK(std::find(enc.numeric.begin(), enc.numeric.end(), "grade") == enc.numeric.end());
}

TEST_CASE("property: encode is deterministic and pure") {
    const auto d = dataset(9);
    const auto enc = fit_encoder(d.links, d.states, d.towns);
    const auto hash = encoder_hash(enc);
    const auto other = dataset(10, 50);
    for (std::size_t i = 0; i < other.links.size(); ++i) {
        const auto a = encode(other.links[i], other.states[i], embedding_for(d, other.links[i].town), enc);
        const auto b = encode(other.links[i], other.states[i], embedding_for(d, other.links[i].town), enc);
        CHECK(a == b);
    }
    CHECK(encoder_hash(enc) == hash);
    CHECK(encoder_hash(fit_encoder(d.links, d.states, d.towns)) == hash);

    // Distinct in-vocabulary categories give distinct vectors.
    std::set<std::vector<double>> seen;
    for (const auto& ty : {"primary", "secondary", "residential"})
        for (const auto& ut : {"urban", "suburban"}) {
            roadnet::RoadLink l = d.links[0];
            l.road_type = ty;
            l.urban_type = ut;
            seen.insert(encode(l, d.states[0], nullptr, enc));
        }
    CHECK(seen.size() == 6);
}

TEST_CASE("encoder json round trip") {
    const auto d = dataset(11);
    const auto enc = fit_encoder(d.links, d.states, d.towns);
    const auto json = encoder_to_json(enc);
    const auto back = encoder_from_json(json);
    CHECK(encoder_to_json(back) == json);
    CHECK(encoder_hash(back) == encoder_hash(enc));
    for (std::size_t i = 0; i < 10; ++i)
        CHECK(encode(d.links[i], d.states[i], embedding_for(d, d.links[i].town), back) ==
              encode(d.links[i], d.states[i], embedding_for(d, d.links[i].town), enc));
    CHECK_THROWS_AS(encoder_from_json("{"), ParseError);
    CHECK_THROWS_AS(encoder_from_json(R"({"version": 1})"), ValidationError);
}

TEST_CASE("encoder needs enough data") {
    auto d = dataset(12, 4);
    std::vector<TownEmbedding> one{d.towns[0]};
    CHECK_THROWS_AS(fit_encoder(d.links, d.states, one), ConfigError);
    CHECK_THROWS_AS(fit_encoder(std::span(d.links).first(1), std::span(d.states).first(1), d.towns), ValidationError);
    CHECK_THROWS_AS(fit_encoder(d.links, std::span(d.states).first(2), d.towns), ShapeError);
    EncoderOptions no_imagery;
    no_imagery.imagery = false;
    CHECK_FALSE(fit_encoder(d.links, d.states, one, no_imagery).pca.has_value());
}
