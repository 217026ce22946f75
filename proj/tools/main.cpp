// opmodenet command-line driver.

#include "opmodenet/io.hpp"
#include "opmodenet/pipeline.hpp"
#include "opmodenet/synth.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace opmodenet;

namespace {

struct PipelineArgs {
    std::string config;
    std::vector<std::string> overrides;
    bool force = false;
    std::size_t jobs = 1;
};

void add_pipeline_options(CLI::App* app, PipelineArgs& args) {
    app->add_option("-c,--config", args.config, "pipeline config (JSON)")->required();
    app->add_option("--set", args.overrides, "override a config key, e.g. training.epochs=300");
    app->add_flag("--force", args.force, "rerun even if the stage config changed since the last run");
    app->add_option("-j,--jobs", args.jobs, "worker threads for parallel stages")->check(CLI::PositiveNumber);
}

int run_stages(const std::vector<pipeline::Stage>& stages, const PipelineArgs& args) {
    const auto config = pipeline::load_config(args.config, args.overrides);
    pipeline::RunOptions opt;
    opt.force = args.force;
    opt.jobs = args.jobs;
    opt.log = &std::cerr;
    for (auto s : stages) pipeline::run_stage(s, config, opt);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Link-level operating-mode distributions and emissions"};
    app.require_subcommand(1);

    PipelineArgs args;
    std::vector<std::pair<CLI::App*, pipeline::Stage>> stage_commands;
    const std::map<pipeline::Stage, std::string> help = {
        {pipeline::Stage::build_network, "split ways into links, join attributes, attach grades"},
        {pipeline::Stage::derive_traffic, "peak-hour flow, BPR travel time and congested speed"},
        {pipeline::Stage::process_traces, "parse GPX, map-match, smooth and attribute seconds to links"},
        {pipeline::Stage::ground_truth, "opmode distributions of observed links"},
        {pipeline::Stage::featurize, "train/test split and link feature vectors"},
        {pipeline::Stage::train, "fit the modular network"},
        {pipeline::Stage::predict, "predicted distributions for every link"},
        {pipeline::Stage::baseline, "average-speed drive-cycle distributions"},
        {pipeline::Stage::emissions, "link and group emissions for model, baseline and truth"},
        {pipeline::Stage::evaluate, "held-out comparison report"},
    };
    for (auto s : pipeline::all_stages()) {
        auto* sub = app.add_subcommand(pipeline::to_string(s), help.at(s));
        add_pipeline_options(sub, args);
        stage_commands.emplace_back(sub, s);
    }
    auto* run_all = app.add_subcommand("run-all", "every stage in dependency order");
    add_pipeline_options(run_all, args);

    auto* show = app.add_subcommand("show-config", "print the effective config (defaults, file and overrides)");
    std::string show_config;
    std::vector<std::string> show_overrides;
    show->add_option("-c,--config", show_config, "pipeline config (JSON); omit for the defaults");
    show->add_option("--set", show_overrides, "override a config key");

    auto* gen = app.add_subcommand("generate", "write a synthetic fixture set");
    synth::SyntheticSpec spec;
    std::string out_dir;
    bool reference = false;
    gen->add_option("-o,--out", out_dir, "output directory")->required();
    gen->add_option("--rows", spec.grid.rows, "grid rows")->capture_default_str();
    gen->add_option("--cols", spec.grid.cols, "grid columns")->capture_default_str();
    gen->add_option("--spacing", spec.grid.spacing_m, "block length, m")->capture_default_str();
    gen->add_option("--towns-x", spec.grid.towns_x, "town tiles across")->capture_default_str();
    gen->add_option("--towns-y", spec.grid.towns_y, "town tiles down")->capture_default_str();
    gen->add_flag("--one-way-rows", [&](std::int64_t) { spec.grid.all_two_way = false; }, "make every fourth row one-way");
    gen->add_option("--traces", spec.traces.count, "number of traces")->capture_default_str();
    gen->add_option("--noise", spec.traces.noise_m, "GPS noise sigma, m")->capture_default_str();
    gen->add_option("--duration", spec.traces.duration_s, "trace length, s")->capture_default_str();
    gen->add_flag("--feature-targets", spec.feature_targets, "write feature-conditioned targets and use them as truth");
    gen->add_option("--target-scale", spec.target_scale, "weight scale of the target map")->capture_default_str();
    gen->add_option("--seed", spec.seed, "random seed")->capture_default_str();
    gen->add_flag("--reference-network", reference, "write only the 50-node reference network.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        for (const auto& [sub, stage] : stage_commands)
            if (sub->parsed()) return run_stages({stage}, args);
        if (run_all->parsed()) return run_stages(pipeline::all_stages(), args);
        if (show->parsed()) {
            if (show_config.empty()) {
                std::cout << pipeline::default_config().dump(1) << "\n";
            } else {
                std::cout << pipeline::load_config(show_config, show_overrides).effective.dump(1) << "\n";
            }
            return 0;
        }
        if (gen->parsed()) {
            if (reference) {
                io::write_file(std::filesystem::path(out_dir) / "network.json",
                               roadnet::serialize_network(synth::reference_network()));
                return 0;
            }
            const auto set = synth::generate(spec, out_dir);
            std::cerr << "generated " << set.files.size() << " files, " << set.links << " links, " << set.traces
                      << " traces under " << out_dir << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pipeline::exit_code_for(e);
    }
    return 0;
}
