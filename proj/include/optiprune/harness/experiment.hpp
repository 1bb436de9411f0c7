// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "optiprune/harness/config.hpp"
#include "optiprune/harness/report.hpp"

namespace optiprune::harness {

/// One repetition. Noise seed is config.seed + repetition, prune seed
/// config.prune.seed + repetition.
///
/// full:     catalog from the raw draw, optimize with pruned diagnostics, sample pruned
/// v1:       catalog from the raw draw, sample the raw draw pruned
/// v2:       optimize with full diagnostics, sample unpruned
/// baseline: sample the raw draw unpruned
RunReport run_once(const ExperimentConfig& config, std::size_t repetition);

/// All repetitions, ordered by repetition index. Writes config.output when set.
std::vector<RunReport> run_experiment(const ExperimentConfig& config);

}  // namespace optiprune::harness
