// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

// A small latent-diffusion stand-in with seeded, frozen weights.
//
// The denoiser flattens an H x W x C latent into N = H * W tokens, adds a
// sinusoidal timestep embedding, and applies cross-attention to the prompt
// embeddings, self-attention (optionally pruned) and a pointwise MLP, each
// with a residual add. The sampler is a DDPM ancestral sampler with
// classifier-free guidance. The autoencoder is the identity at this scale.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "optiprune/attn_core.hpp"
#include "optiprune/matrix.hpp"
#include "optiprune/sim_prune.hpp"

namespace optiprune {

struct PipelineConfig {
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t latent_channels = 8;
    std::size_t text_channels = 16;
    std::size_t heads = 2;
    std::size_t vocab_size = 49;

    std::size_t num_steps = 50;
    double guidance_scale = 7.5;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    /// Prompt token ids; `subject_tokens` index into this list.
    std::vector<std::size_t> prompt_tokens{0, 11, 23, 7, 42, 3};
    std::vector<std::size_t> subject_tokens{2, 5};

    /// Scale of the query/key projections; larger values give sharper maps.
    double attn_gain = 1.0;

    /// Gaussian filter applied to attention maps before scoring.
    double smooth_sigma = 0.5;
    std::size_t smooth_kernel = 3;

    std::uint64_t seed = 0;

    std::size_t tokens() const noexcept { return height * width; }
    std::size_t latent_size() const noexcept { return tokens() * latent_channels; }

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct DenoiserWeights {
    AttentionWeights cross;  // queries from image tokens, keys/values from text
    AttentionWeights self;
    Matrix mlp_in;           // C x 2C
    Matrix mlp_out;          // 2C x C
};

struct PromptSpec {
    Matrix embeddings;                        // M x C_txt
    std::vector<std::size_t> token_ids;
    std::vector<std::size_t> subject_indices;
};

struct DenoiserOutput {
    std::vector<double> eps;  // same layout as the latent
    CrossAttnMap cross;
    SelfAttnMap self;
    double self_attn_ms = 0.0;
};

struct SampleReport {
    std::uint64_t denoiser_calls = 0;
    std::uint64_t self_attn_macs = 0;           // what was executed
    std::uint64_t self_attn_macs_baseline = 0;  // what an unpruned run would execute
    double self_attn_ms = 0.0;

    double mac_ratio() const noexcept {
        return self_attn_macs_baseline == 0
                   ? 1.0
                   : static_cast<double>(self_attn_macs) /
                         static_cast<double>(self_attn_macs_baseline);
    }
};

struct SampleResult {
    std::vector<double> z0;
    SampleReport report;
};

/// Attention maps of the designated block at the first denoising step.
struct DiagnosticMaps {
    CrossAttnMap cross;
    SelfAttnMap self;
};

/// Forward intermediates kept for the attention-map vector-Jacobian product.
struct DiagnosticTape {
    Matrix tokens;       // X = latent tokens + timestep embedding
    Matrix text;
    MultiHeadTrace cross;
    Matrix self_input;   // H1 rows at kept positions
    MultiHeadTrace self;
    std::vector<std::size_t> kept;
};

/// eps_u + g (eps_c - eps_u), evaluated as g eps_c + (1 - g) eps_u so g = 1
/// returns eps_c exactly.
std::vector<double> classifier_free_guidance(std::span<const double> eps_uncond,
                                             std::span<const double> eps_cond, double guidance);

/// Sinusoidal embedding of a scalar timestep, `channels` wide.
std::vector<double> timestep_embedding(std::size_t t, std::size_t channels);

class ToyPipeline {
public:
    /// Seeded weights and prompt embeddings derived from config.seed.
    explicit ToyPipeline(PipelineConfig config);

    /// Explicit weights, for fixtures with hand-set attention.
    ToyPipeline(PipelineConfig config, DenoiserWeights weights);

    const PipelineConfig& config() const noexcept { return config_; }
    const DenoiserWeights& weights() const noexcept { return weights_; }
    const PromptSpec& prompt() const noexcept { return prompt_; }
    const Matrix& null_embeddings() const noexcept { return null_text_; }

    /// beta_t for t = 1..T at index t - 1, linear from beta_start to beta_end.
    const std::vector<double>& betas() const noexcept { return betas_; }

    /// One denoiser pass with the given text embeddings. Throws ShapeError when
    /// the latent size is wrong and DomainError when t is outside [1, T].
    DenoiserOutput denoiser_forward(std::span<const double> latent, const Matrix& text,
                                    std::size_t t, const PruneCatalog* prune = nullptr) const;

    /// Conditional pass with the pipeline prompt.
    DenoiserOutput denoiser_forward(std::span<const double> latent, std::size_t t,
                                    const PruneCatalog* prune = nullptr) const;

    /// T guided DDPM steps from `initial_noise`.
    SampleResult sample(std::span<const double> initial_noise,
                        const PruneCatalog* prune = nullptr) const;

    /// Input of the self-attention block (conditional branch, t = T).
    TokenMatrix self_attention_input(std::span<const double> latent) const;

    /// Pruning plan built from self_attention_input(latent).
    PruneCatalog build_catalog(std::span<const double> latent, const PruneConfig& config) const;

    /// Attention maps at t = T for the conditional branch. Self-attention
    /// runs on kept tokens only when `prune` is given; nothing is recovered.
    DiagnosticMaps diagnose(std::span<const double> latent, const PruneCatalog* prune = nullptr,
                            DiagnosticTape* tape = nullptr) const;

    /// Gradient of a scalar with respect to the latent, given its gradients
    /// with respect to the cross maps (N x M) and kept self maps.
    std::vector<double> diagnose_vjp(const DiagnosticTape& tape, const Matrix& d_cross,
                                     const Matrix& d_self) const;

private:
    Matrix latent_tokens(std::span<const double> latent, std::size_t t) const;
    void check_latent(std::span<const double> latent) const;

    PipelineConfig config_;
    DenoiserWeights weights_;
    PromptSpec prompt_;
    Matrix null_text_;
    std::vector<double> betas_;
};

/// FNV-1a over the IEEE-754 bit patterns, as 16 hex digits.
std::string checksum(std::span<const double> values);
std::string checksum(std::span<const std::size_t> values);

}  // namespace optiprune
