// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/harness/experiment.hpp"

#include <chrono>
#include <future>
#include <optional>

#include <spdlog/spdlog.h>

#include "optiprune/latent_mapper.hpp"
#include "optiprune/toy_pipeline.hpp"

namespace optiprune::harness {

RunReport run_once(const ExperimentConfig& config, std::size_t repetition) {
    const auto start = std::chrono::steady_clock::now();
    const ToyPipeline pipeline(config.pipeline);

    RunReport report;
    report.mode = config.mode;
    report.repetition = repetition;
    report.pipeline_seed = config.pipeline.seed;
    report.noise_seed = config.seed + repetition;
    report.prune_seed = config.prune.seed + repetition;

    const NoiseDistribution raw =
        NoiseDistribution::standard(round_seed(report.noise_seed, 0), pipeline.config().latent_size());
    std::vector<double> initial = raw.transform();

    // The catalog is built once, from the raw draw, and shared by the
    // diagnostics and the sampler.
    std::optional<PruneCatalog> catalog;
    if (uses_pruning(config.mode)) {
        PruneConfig pc = config.prune;
        pc.seed = report.prune_seed;
        catalog = pipeline.build_catalog(initial, pc);
        report.catalog = CatalogSummary::from(*catalog);
        spdlog::debug("rep {}: catalog P={} K={}", repetition, catalog->base_indices().size(),
                      catalog->pruned_count());
    }
    const PruneCatalog* prune = catalog ? &*catalog : nullptr;

    if (uses_mapper(config.mode)) {
        const MapperResult m = optimize_noise(config.mapper, pipeline, report.noise_seed, prune);
        initial = m.dist.transform();
        report.kl = m.kl;
        report.loss_trace = m.trace;
        report.s_cross_trace = m.rounds[m.best_round].s_cross_trace;
        report.s_self_trace = m.rounds[m.best_round].s_self_trace;
        report.rounds_run = m.rounds.size();
        report.best_round = m.best_round;
        report.mapper_scores = m.scores;
        spdlog::debug("rep {}: mapper rounds={} best_round={} loss={}", repetition,
                      m.rounds.size(), m.best_round, m.trace.empty() ? 0.0 : m.trace.back());
    }

    const ValidityScores eval = score_latent(initial, pipeline, nullptr, config.mapper);
    report.s_cross = eval.s_cross;
    report.s_self = eval.s_self;
    report.valid = eval.valid;

    const SampleResult s = pipeline.sample(initial, prune);
    report.denoiser_calls = s.report.denoiser_calls;
    report.self_attn_macs = s.report.self_attn_macs;
    report.self_attn_macs_baseline = s.report.self_attn_macs_baseline;
    report.mac_ratio = s.report.mac_ratio();
    report.self_attn_ms = s.report.self_attn_ms;
    report.z0_checksum = checksum(std::span<const double>(s.z0));

    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    spdlog::debug("rep {} mode={} s_cross={:.4f} s_self={:.4f} mac_ratio={:.4f} wall={:.1f}ms",
                 repetition, to_string(config.mode), report.s_cross, report.s_self,
                 report.mac_ratio, report.wall_ms);
    return report;
}

std::vector<RunReport> run_experiment(const ExperimentConfig& config) {
    config.validate();
    std::vector<RunReport> reports(config.repetitions);
    if (config.jobs <= 1 || config.repetitions == 1) {
        for (std::size_t r = 0; r < config.repetitions; ++r) {
            reports[r] = run_once(config, r);
        }
    } else {
        for (std::size_t begin = 0; begin < config.repetitions; begin += config.jobs) {
            const std::size_t end = std::min(config.repetitions, begin + config.jobs);
            std::vector<std::future<RunReport>> batch;
            for (std::size_t r = begin; r < end; ++r) {
                batch.push_back(std::async(std::launch::async, run_once, std::cref(config), r));
            }
            for (std::size_t r = begin; r < end; ++r) {
                reports[r] = batch[r - begin].get();
            }
        }
    }
    if (!config.output.empty()) {
        emit_metrics(reports, config.format, config.output);
    }
    return reports;
}

}  // namespace optiprune::harness
