// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

// Initial-noise diagnostics and optimization.
//
// A latent is scored by two attention diagnostics taken from the toy
// denoiser's first step: subject neglect (weakest peak cross-attention among
// the subject tokens) and subject mixing (mean self-attention overlap at the
// subjects' cross-attention peaks). Noise is reparameterized as
// mu + exp(log_sigma) * z and (mu, log_sigma) are driven down the joint loss
//     s_cross + s_self + lambda * KL(N(mu, sigma^2) || N(0, I))
// by plain gradient descent, restarting from fresh draws for several rounds.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "optiprune/attn_core.hpp"
#include "optiprune/sim_prune.hpp"
#include "optiprune/toy_pipeline.hpp"

namespace optiprune {

struct ValidityScores {
    double s_cross = 0.0;  // in [0, 1]
    double s_self = 0.0;   // in [0, 0.5]
    bool valid = false;

    double combined() const noexcept { return s_cross + s_self; }
};

enum class GradientMode { analytic, finite_difference };

std::string to_string(GradientMode mode);
/// Throws ConfigError for anything other than "analytic" / "finite_difference".
GradientMode parse_gradient_mode(const std::string& text);

struct MapperConfig {
    double tau_c = 0.8;
    double tau_s = 0.3;
    double lambda_kl = 0.1;
    std::size_t inner_steps = 50;
    std::size_t outer_rounds = 5;
    double learning_rate = 0.05;
    GradientMode gradient_mode = GradientMode::analytic;
    double fd_epsilon = 1e-4;

    /// Throws ConfigError naming the field. A zero learning rate is allowed
    /// and turns the optimizer into a no-op.
    void validate() const;
};

/// Diagonal Gaussian over the latent plus the frozen standard-normal draw it transforms.
struct NoiseDistribution {
    std::vector<double> mu;
    std::vector<double> log_sigma;
    std::vector<double> z;
    std::uint64_t seed = 0;

    /// mu = 0, sigma = 1 and z drawn from Rng(seed).
    static NoiseDistribution standard(std::uint64_t seed, std::size_t size);

    std::size_t size() const noexcept { return mu.size(); }
    std::vector<double> sigma() const;

    /// mu + sigma * z.
    std::vector<double> transform() const;
};

/// Seed of the standard-normal draw used by an optimization round.
std::uint64_t round_seed(std::uint64_t seed, std::size_t round);

/// 1 - min over subjects of the spatial max of the (smoothed) cross map.
double cross_attn_score(const CrossAttnMap& maps, std::span<const std::size_t> subjects);

/// sum(min(a, b)) / sum(a + b) over matching cells.
double overlap_ratio(std::span<const double> a, std::span<const double> b);

/// Mean overlap_ratio over subject pairs, each subject read at the argmax of
/// its cross map (first in row-major order, restricted to the positions
/// present in `self_maps`). Needs at least two subjects.
double self_attn_conflict(const SelfAttnMap& self_maps, const CrossAttnMap& cross_maps,
                          std::span<const std::size_t> subjects);

/// Closed form 1/2 sum(sigma^2 + mu^2 - 1 - ln sigma^2).
double kl_to_standard_normal(const NoiseDistribution& dist);

double joint_loss(const ValidityScores& scores, double kl, double lambda_kl);

/// Smooth every text token's map.
CrossAttnMap smooth_cross_maps(const CrossAttnMap& maps, double sigma, std::size_t kernel = 3);

/// Smooth each query's map on the full grid, drop the mass that lands on
/// absent positions and renormalize the rest to sum to one.
SelfAttnMap smooth_self_maps(const SelfAttnMap& maps, double sigma, std::size_t kernel = 3);

/// Scores of a latent under the pipeline's first-step attention. With
/// `prune`, self-attention sees kept tokens only and nothing is recovered.
ValidityScores score_latent(std::span<const double> latent, const ToyPipeline& pipeline,
                            const PruneCatalog* prune = nullptr, const MapperConfig& config = {});

ValidityScores score_noise(const NoiseDistribution& dist, const ToyPipeline& pipeline,
                           const PruneCatalog* prune = nullptr, const MapperConfig& config = {});

struct LossEvaluation {
    ValidityScores scores;
    double kl = 0.0;
    double loss = 0.0;
    std::vector<double> grad_mu;
    std::vector<double> grad_log_sigma;
};

/// Joint loss and its gradient with respect to (mu, log_sigma).
/// Analytic mode backpropagates through the denoiser's attention maps;
/// finite-difference mode perturbs every coordinate by +-config.fd_epsilon.
LossEvaluation evaluate_loss(const NoiseDistribution& dist, const ToyPipeline& pipeline,
                             const PruneCatalog* prune, const MapperConfig& config,
                             GradientMode mode);

struct RoundRecord {
    std::uint64_t seed = 0;
    std::vector<double> loss_trace;
    std::vector<double> s_cross_trace;
    std::vector<double> s_self_trace;
    ValidityScores final_scores;
    std::size_t updates = 0;
    bool converged = false;
};

struct MapperResult {
    NoiseDistribution dist;
    ValidityScores scores;
    double kl = 0.0;
    std::vector<double> trace;  // loss trace of the round that produced `dist`
    std::vector<RoundRecord> rounds;
    std::size_t best_round = 0;
    std::size_t best_step = 0;
};

/// Two-level search: each round restarts from mu = 0, sigma = 1 and a fresh
/// draw, then takes up to inner_steps descent steps, stopping as soon as the
/// scores fall below both thresholds. Later rounds run only while no round
/// has converged. A converged point is returned as is; otherwise the point
/// with the lowest s_cross + s_self over all trajectories wins.
MapperResult optimize_noise(const MapperConfig& config, const ToyPipeline& pipeline,
                            std::uint64_t seed, const PruneCatalog* prune = nullptr);

}  // namespace optiprune
