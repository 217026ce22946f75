#include <doctest.h>

#include "oracles.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

using namespace opmodenet;
using namespace opmodenet::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtureConfig = oracle::data_path("fixture/config.json");

PipelineConfig fixture_config(const fs::path& out, std::vector<std::string> overrides = {}) {
    overrides.push_back("paths.output_dir=\"" + out.generic_string() + "\"");
    return load_config(kFixtureConfig, overrides);
}

json fixture_document() { return json::parse(io::read_file(kFixtureConfig)); }

std::string manifest(const fs::path& out, Stage s) { return oracle::slurp(out / to_string(s) / "manifest.json"); }

}  // namespace

TEST_CASE("config: defaults, overrides and errors") {
    const auto base = oracle::data_path("fixture");
    const auto c = config_from_json(fixture_document(), base);
    CHECK(c.seed == 7);
    CHECK(c.paths.network == base / "network.json");
    CHECK(c.paths.output_dir == base / "out");
    CHECK(c.effective["training"]["epochs"] == default_config()["training"]["epochs"]);
    CHECK(default_config()["seed"].is_null());

    const auto o = load_config(kFixtureConfig, {"training.epochs=12", "ground_truth.window=all", "join.gate_m=30"});
    CHECK(o.training.epochs == 12);
    CHECK(o.join.gate_m == 30.0);

    auto bad = fixture_document();
    bad["trainig"] = json::object();
    CHECK_THROWS_AS(config_from_json(bad, base), ConfigError);
    bad = fixture_document();
    bad.erase("seed");
    CHECK_THROWS_AS(config_from_json(bad, base), ConfigError);
    bad = fixture_document();
    bad["seed"] = -3;
    CHECK_THROWS_AS(config_from_json(bad, base), ConfigError);
    bad = fixture_document();
    bad["paths"]["network"] = "nowhere.json";
    CHECK_THROWS_AS(config_from_json(bad, base), ConfigError);
    bad = fixture_document();
    bad["ground_truth"]["source"] = "guess";
    CHECK_THROWS_AS(config_from_json(bad, base), ConfigError);
    bad = fixture_document();
    bad["training"]["epochs"] = "many";
    CHECK_THROWS_AS(config_from_json(bad, base), ConfigError);
    CHECK_THROWS_AS(load_config(kFixtureConfig, {"training.epochs"}), ConfigError);
    CHECK_THROWS_AS(load_config(kFixtureConfig, {"training.epoch=3"}), ConfigError);
    CHECK_THROWS_AS(load_config(oracle::data_path("fixture/absent.json")), ConfigError);
}

TEST_CASE("stage names round trip") {
    REQUIRE(all_stages().size() == 10);
    CHECK(to_string(all_stages().front()) == "build-network");
    CHECK(to_string(all_stages().back()) == "evaluate");
    for (auto s : all_stages()) CHECK(parse_stage(to_string(s)) == s);
    CHECK_FALSE(parse_stage("deploy").has_value());
}

TEST_CASE("exit codes by error kind") {
    CHECK(exit_code_for(ConfigError("x")) == 2);
    CHECK(exit_code_for(MissingArtifact("x")) == 3);
    CHECK(exit_code_for(ValidationError("x")) == 4);
    CHECK(exit_code_for(ParseError("x")) == 4);
    CHECK(exit_code_for(ShapeError("x")) == 4);
    CHECK(exit_code_for(DomainError("x")) == 4);
    CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("a stage refuses to run before its inputs exist") {
    const auto out = oracle::work_dir("pipeline-missing");
    const auto c = fixture_config(out);
    try {
        run_stage(Stage::train, c);
        FAIL("expected MissingArtifact");
    } catch (const MissingArtifact& e) {
        CHECK(std::string(e.what()).find("featurize output missing") != std::string::npos);
    }
    CHECK_THROWS_AS(run_stage(Stage::derive_traffic, c), MissingArtifact);
    CHECK_FALSE(fs::exists(out / "train"));
}

TEST_CASE("up-to-date stages are skipped and changed configs are refused") {
    const auto out = oracle::work_dir("pipeline-incremental");
    const auto c = fixture_config(out);
    std::ostringstream log;
    RunOptions opts;
    opts.log = &log;
    CHECK_FALSE(run_stage(Stage::build_network, c, opts).skipped);
    const auto first = manifest(out, Stage::build_network);
    CHECK(run_stage(Stage::build_network, c, opts).skipped);
    CHECK(log.str().find("build-network: up to date") != std::string::npos);

    const auto changed = fixture_config(out, {"join.gate_m=40"});
    try {
        run_stage(Stage::build_network, changed);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("--force") != std::string::npos);
    }
    CHECK(manifest(out, Stage::build_network) == first);
    RunOptions force;
    force.force = true;
    CHECK_FALSE(run_stage(Stage::build_network, changed, force).skipped);
    CHECK(manifest(out, Stage::build_network) != first);

    // A tampered output makes the stage stale again.
    CHECK_FALSE(run_stage(Stage::build_network, c, force).skipped);
    for (const auto& e : fs::directory_iterator(out / "build-network"))
        if (e.path().filename() != "manifest.json") {
            io::write_file(e.path(), "tampered\n");
            break;
        }
    CHECK_FALSE(run_stage(Stage::build_network, c).skipped);
    CHECK(manifest(out, Stage::build_network) == first);
}

TEST_CASE("changed inputs rerun a stage") {
    const auto copy = oracle::work_dir("pipeline-inputs");
    fs::copy(oracle::data_path("fixture"), copy / "fixture", fs::copy_options::recursive);
    fs::remove_all(copy / "fixture" / "out");
    const auto cfg = copy / "fixture" / "config.json";
    const auto c = load_config(cfg);
    CHECK_FALSE(run_stage(Stage::build_network, c).skipped);
    CHECK(run_stage(Stage::build_network, c).skipped);
    auto elevation = io::read_file(copy / "fixture" / "elevation.csv");
    io::write_file(copy / "fixture" / "elevation.csv", elevation + "\n");
    const auto c2 = load_config(cfg);
    CHECK_FALSE(run_stage(Stage::build_network, c2).skipped);
}

TEST_CASE("run-all on the fixture reproduces the committed manifests") {
    const auto stages = oracle::work_dir("pipeline-stages");
    const auto all = oracle::work_dir("pipeline-all");
    const auto parallel = oracle::work_dir("pipeline-jobs");
    const auto c_stages = fixture_config(stages);
    for (auto s : all_stages()) CHECK_FALSE(run_stage(s, c_stages).skipped);
    const auto results = run_all(fixture_config(all));
    REQUIRE(results.size() == 10);
    RunOptions jobs;
    jobs.jobs = 3;
    run_all(fixture_config(parallel), jobs);

    const auto expected = oracle::data_path("fixture_manifests");
    for (auto s : all_stages()) {
        const auto name = to_string(s);
        CHECK_MESSAGE(manifest(all, s) == manifest(stages, s), name);
        CHECK_MESSAGE(manifest(parallel, s) == manifest(all, s), name);
        CHECK_MESSAGE(manifest(all, s) == oracle::slurp(expected / (name + ".json")), name);
        // Every output listed in a manifest exists with the recorded hash.
        const auto m = json::parse(manifest(all, s));
        CHECK(m["stage"] == name);
        for (const auto& [file, hash] : m["outputs"].items())
            CHECK(io::sha256_file(all / name / file) == hash.get<std::string>());
    }
    const auto again = run_all(fixture_config(all));
    for (const auto& r : again) CHECK(r.skipped);
}
