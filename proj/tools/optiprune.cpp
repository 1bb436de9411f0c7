// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

// optiprune: run noise-optimization / token-pruning experiments on the toy pipeline.
//
//   optiprune run --config exp.cfg [--mode M] [--gamma F] [--steps N] [--out PATH]
//                 [--format json|csv] [--reps N] [--seed N] [--jobs N] [--with-timing]
//   optiprune validate-config --config exp.cfg
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or IO error.
// OPTIPRUNE_LOG_LEVEL=trace|debug|info|warn|error|off sets log verbosity.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "optiprune/error.hpp"
#include "optiprune/harness/config.hpp"
#include "optiprune/harness/experiment.hpp"
#include "optiprune/harness/report.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Overrides {
    std::optional<std::string> mode;
    std::optional<double> gamma;
    std::optional<std::size_t> steps;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<std::size_t> reps;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
};

void apply_overrides(const Overrides& o, optiprune::harness::KeyValues& kv) {
    if (o.mode) kv["run.mode"] = *o.mode;
    if (o.gamma) kv["prune.gamma"] = fmt::format("{}", *o.gamma);
    if (o.steps) kv["pipeline.steps"] = std::to_string(*o.steps);
    if (o.out) kv["run.output"] = *o.out;
    if (o.format) kv["run.format"] = *o.format;
    if (o.reps) kv["run.repetitions"] = std::to_string(*o.reps);
    if (o.seed) kv["run.seed"] = std::to_string(*o.seed);
    if (o.jobs) kv["run.jobs"] = std::to_string(*o.jobs);
}

void configure_logging() {
    spdlog::set_default_logger(spdlog::stderr_logger_mt("optiprune"));
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* level = std::getenv("OPTIPRUNE_LOG_LEVEL")) {
        spdlog::set_level(spdlog::level::from_str(level));
    }
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();

    CLI::App app{"Attention-guided noise optimization and similarity token pruning on a toy "
                 "diffusion pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides overrides;
    bool with_timing = false;

    auto* run = app.add_subcommand("run", "Run an experiment and write its reports");
    run->add_option("--config", config_path, "Config file (key = value lines)")->required();
    run->add_option("--mode", overrides.mode, "full | v1 | v2 | baseline");
    run->add_option("--gamma", overrides.gamma, "Pruning ratio");
    run->add_option("--steps", overrides.steps, "Denoising steps T");
    run->add_option("--out", overrides.out, "Output path");
    run->add_option("--format", overrides.format, "json | csv");
    run->add_option("--reps", overrides.reps, "Repetitions");
    run->add_option("--seed", overrides.seed, "Noise seed of repetition 0");
    run->add_option("--jobs", overrides.jobs, "Repetitions run concurrently");
    run->add_flag("--with-timing", with_timing, "Include wall-clock fields in JSON output");

    auto* validate = app.add_subcommand("validate-config", "Check a config file without running");
    validate->add_option("--config", config_path, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    namespace h = optiprune::harness;
    h::ExperimentConfig config;
    try {
        h::KeyValues kv = h::read_config_file(config_path);
        apply_overrides(overrides, kv);
        config = h::config_from_key_values(kv);
    } catch (const optiprune::IoError& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const optiprune::Error& e) {
        spdlog::error("config error: {}", e.what());
        return kExitConfig;
    }

    if (validate->parsed()) {
        std::cout << h::render_key_values(h::to_key_values(config));
        return 0;
    }

    try {
        const std::string out = config.output;
        config.output.clear();
        const auto reports = h::run_experiment(config);
        for (const auto& r : reports) {
            spdlog::info("rep {} mode={} s_cross={:.4f} s_self={:.4f} valid={} mac_ratio={:.4f} "
                         "wall={:.1f}ms",
                         r.repetition, h::to_string(r.mode), r.s_cross, r.s_self, r.valid,
                         r.mac_ratio, r.wall_ms);
        }
        if (out.empty()) {
            std::cout << (config.format == h::OutputFormat::json
                              ? h::render_json(reports, with_timing)
                              : h::render_csv(reports));
        } else {
            h::emit_metrics(reports, config.format, out, with_timing);
            spdlog::info("wrote {} report(s) to {}", reports.size(), out);
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitRuntime;
    }
    return 0;
}
