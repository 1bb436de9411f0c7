// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "optiprune/harness/config.hpp"
#include "optiprune/sim_prune.hpp"

namespace optiprune::harness {

/// Index lists and checksums of a pruning catalog, enough to audit or rebuild it.
struct CatalogSummary {
    std::size_t base_count = 0;
    std::size_t pruned_count = 0;
    double gamma = 0.0;
    std::size_t patch_size = 0;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::size_t> base_indices;
    std::vector<std::size_t> prune_indices;
    std::vector<std::size_t> recovery;
    std::string base_checksum;
    std::string prune_checksum;
    std::string recovery_checksum;

    static CatalogSummary from(const PruneCatalog& catalog);
};

struct RunReport {
    Mode mode = Mode::full;
    std::size_t repetition = 0;
    std::uint64_t pipeline_seed = 0;
    std::uint64_t noise_seed = 0;
    std::uint64_t prune_seed = 0;

    // Unpruned diagnostics of the initial noise handed to the sampler.
    double s_cross = 0.0;
    double s_self = 0.0;
    bool valid = false;
    double kl = 0.0;

    // Optimizer trajectory of the selected round; empty without the mapper.
    std::vector<double> loss_trace;
    std::vector<double> s_cross_trace;
    std::vector<double> s_self_trace;
    std::size_t rounds_run = 0;
    std::size_t best_round = 0;
    // The optimizer's own view of the selected point (pruned diagnostics in
    // pruned modes); unset without the mapper.
    std::optional<ValidityScores> mapper_scores;

    std::uint64_t denoiser_calls = 0;
    std::uint64_t self_attn_macs = 0;
    std::uint64_t self_attn_macs_baseline = 0;
    double mac_ratio = 1.0;

    std::optional<CatalogSummary> catalog;
    std::string z0_checksum;

    // Timing; excluded from the canonical payload.
    double wall_ms = 0.0;
    double self_attn_ms = 0.0;
};

/// Floats rounded to 9 significant digits; `include_timing` adds wall-clock fields.
nlohmann::json to_json(const RunReport& report, bool include_timing = false);
RunReport report_from_json(const nlohmann::json& j);

/// Stable-key-ordered JSON array.
std::string render_json(const std::vector<RunReport>& reports, bool include_timing = false);

inline constexpr const char* kCsvHeader =
    "mode,seed,s_cross,s_self,valid,kl,mac_ratio,wall_ms,z0_checksum";

std::string render_csv(const std::vector<RunReport>& reports);

/// Write reports to `path`. Empty input raises DomainError, an unwritable
/// path IoError.
void emit_metrics(const std::vector<RunReport>& reports, OutputFormat format,
                  const std::string& path, bool include_timing = false);

}  // namespace optiprune::harness
