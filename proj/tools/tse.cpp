#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include "tse/harness.hpp"

namespace fs = std::filesystem;
using namespace tse;

namespace {

std::vector<sim::Technique> parse_techniques(const std::string& arg) {
    if (arg == "all") return sim::all_techniques();
    return {sim::technique_from_name(arg)};
}

std::vector<std::uint64_t> make_seeds(std::uint64_t base, int count) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(base + i);
    return seeds;
}

struct EmitSet {
    bool csv = true, manifest = true;
};

EmitSet parse_emit(const std::string& arg) {
    EmitSet e{false, false};
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "csv") e.csv = true;
        else if (item == "manifest") e.manifest = true;
        else throw ConfigError("unknown --emit item: " + item);
    }
    return e;
}

std::string join_command(int argc, char** argv) {
    std::string cmd;
    for (int i = 0; i < argc; ++i) {
        if (i) cmd += ' ';
        cmd += argv[i];
    }
    return cmd;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentially private traffic state estimation on the ARZ model"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", technique = "all", emit = "csv,manifest";
    std::string axis;
    std::vector<double> grid;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int num_seeds = 5;

    auto* sim_cmd = app.add_subcommand("simulate", "run the ground-truth plant");
    sim_cmd->add_option("--config", config_path, "scenario file")->required();
    sim_cmd->add_option("--out", out_dir, "output directory");
    sim_cmd->add_option("--emit", emit, "outputs to write: csv,manifest");

    auto* est_cmd = app.add_subcommand("estimate", "plant + privacy + estimation");
    est_cmd->add_option("--config", config_path, "scenario file")->required();
    est_cmd->add_option("--technique", technique, "ekf|ukf|enkf|mhe|all");
    est_cmd->add_option("--seed", seed, "run seed (default: scenario seed)")
        ->each([&](const std::string&) { seed_set = true; });
    est_cmd->add_option("--out", out_dir, "output directory");
    est_cmd->add_option("--emit", emit, "outputs to write: csv,manifest");

    auto* sweep_cmd = app.add_subcommand("sweep", "experiment sweeps");
    sweep_cmd->add_option("--config", config_path, "scenario file")->required();
    sweep_cmd->add_option("--axis", axis, "cv|epsilon|delta")->required();
    sweep_cmd->add_option("--grid", grid, "axis values")->delimiter(',');
    sweep_cmd->add_option("--technique", technique, "ekf|ukf|enkf|mhe|all");
    sweep_cmd->add_option("--num-seeds", num_seeds, "seeds per grid point");
    sweep_cmd->add_option("--out", out_dir, "output directory");
    sweep_cmd->add_option("--emit", emit, "outputs to write: csv,manifest");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const sim::ScenarioConfig cfg = sim::load_scenario(config_path);
        const EmitSet emits = parse_emit(emit);
        fs::create_directories(out_dir);
        const std::string cmd = join_command(argc, argv);
        std::vector<std::string> outputs;
        auto out_path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

        if (sim_cmd->parsed()) {
            const sim::PlantRun plant = sim::run_plant(cfg, derive_seed(cfg.seed, 1));
            if (emits.csv) {
                write_truth_csv(out_path("truth.csv"), cfg, plant);
                outputs.push_back("truth.csv");
                std::cout << "wrote " << out_path("truth.csv") << "\n";
            }
            if (emits.manifest)
                sim::write_manifest(out_path("manifest.json"), cfg, cmd, outputs);
        } else if (est_cmd->parsed()) {
            const std::uint64_t run_seed = seed_set ? seed : cfg.seed;
            const auto techs = parse_techniques(technique);
            const sim::RunResult res = sim::run_experiment(cfg, techs, run_seed);
            std::vector<sim::SweepRow> rows;
            for (const auto& rep : res.reports) {
                rows.push_back({rep.technique, static_cast<double>(run_seed), run_seed, rep});
                std::cout << sim::technique_name(rep.technique)
                          << ": rmse_density=" << rep.rmse_density
                          << " rmse_speed=" << rep.rmse_speed
                          << " mean_step_s=" << rep.mean_step_seconds << "\n";
            }
            if (emits.csv) {
                for (const auto& trace : res.traces) {
                    const std::string name =
                        "trajectory_" + sim::technique_name(trace.technique) + ".csv";
                    write_trajectory_csv(out_path(name), cfg, res.plant, trace);
                    outputs.push_back(name);
                }
                write_report_csv(out_path("report.csv"), rows);
                outputs.push_back("report.csv");
            }
            if (emits.manifest)
                sim::write_manifest(out_path("manifest.json"), cfg, cmd, outputs);
        } else if (sweep_cmd->parsed()) {
            const auto techs = parse_techniques(technique);
            const auto seeds = make_seeds(cfg.seed, num_seeds);
            std::vector<sim::SweepRow> rows;
            if (axis == "cv") {
                std::vector<int> counts;
                if (grid.empty())
                    for (int c = 5; c <= 11; ++c) counts.push_back(c);
                else
                    for (double g : grid) counts.push_back(static_cast<int>(g));
                rows = sim::sweep_cv_segments(cfg, counts, seeds, techs);
            } else if (axis == "epsilon") {
                if (grid.empty()) grid = {0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0};
                rows = sim::sweep_epsilon(cfg, grid, seeds, techs);
            } else if (axis == "delta") {
                if (grid.empty()) grid = {0.01, 0.02, 0.05, 0.1};
                rows = sim::sweep_delta(cfg, grid, seeds, techs);
            } else {
                throw ConfigError("unknown sweep axis: " + axis);
            }
            const auto summary = sim::summarize_over_seeds(rows);
            for (const auto& r : summary)
                std::cout << sim::technique_name(r.technique) << " @" << r.axis_value
                          << ": rmse_density=" << r.report.rmse_density
                          << " rmse_speed=" << r.report.rmse_speed << "\n";
            if (emits.csv) {
                const std::string rep_name = "sweep_" + axis + ".csv";
                const std::string runs_name = "sweep_" + axis + "_runs.csv";
                write_report_csv(out_path(rep_name), summary);
                write_runs_csv(out_path(runs_name), rows);
                outputs.push_back(rep_name);
                outputs.push_back(runs_name);
            }
            if (emits.manifest)
                sim::write_manifest(out_path("manifest.json"), cfg, cmd, outputs);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
