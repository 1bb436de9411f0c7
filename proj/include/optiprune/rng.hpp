// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace optiprune {

/// Mix `seed` with a stream tag so that independent consumers (rounds,
/// repetitions, sampler noise, ...) never share a random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Seeded generator with a portable normal sampler.
///
/// std::normal_distribution is implementation-defined, so the Gaussian draw is
/// done with Box-Muller on top of mt19937_64 to keep checksums identical
/// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    /// Standard normal draw.
    double normal();

    std::vector<double> normal_vector(std::size_t n);

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace optiprune
