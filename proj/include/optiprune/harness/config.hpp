// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration.
//
// Config files are flat `key = value` lines with dotted section keys:
//
//     # comment
//     pipeline.height = 16
//     mapper.gradient_mode = analytic
//     prune.noise_sigma = auto
//     run.mode = full
//
// Unknown keys and malformed values raise ConfigError naming the key.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "optiprune/latent_mapper.hpp"
#include "optiprune/sim_prune.hpp"
#include "optiprune/toy_pipeline.hpp"

namespace optiprune::harness {

enum class Mode { full, v1_no_mapper, v2_no_prune, baseline };

std::string to_string(Mode mode);
/// Accepts full, v1 / v1_no_mapper, v2 / v2_no_prune, baseline.
Mode parse_mode(const std::string& text);

bool uses_mapper(Mode mode) noexcept;
bool uses_pruning(Mode mode) noexcept;

enum class OutputFormat { json, csv };

std::string to_string(OutputFormat format);
OutputFormat parse_format(const std::string& text);

struct ExperimentConfig {
    PipelineConfig pipeline;
    MapperConfig mapper;
    PruneConfig prune;

    Mode mode = Mode::full;
    std::uint64_t seed = 0;        // noise seed of repetition 0
    std::size_t repetitions = 1;
    std::size_t jobs = 1;          // repetitions run concurrently
    std::string output;            // empty: do not write
    OutputFormat format = OutputFormat::json;

    void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

/// Parse `key = value` lines. Blank lines and '#' comments are skipped;
/// a line without '=' or a repeated key raises ConfigError("line N").
KeyValues parse_key_values(std::string_view text);

/// Defaults overridden by `values`, then validated.
ExperimentConfig config_from_key_values(const KeyValues& values);

/// Every key with its current value, in the file format above.
KeyValues to_key_values(const ExperimentConfig& config);
std::string render_key_values(const KeyValues& values);

/// Read a file into key/values. Throws IoError when it cannot be read.
KeyValues read_config_file(const std::string& path);

}  // namespace optiprune::harness
