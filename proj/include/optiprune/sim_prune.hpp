// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

// Similarity-based token pruning for self-attention layers.
//
// One base token is kept per s x s patch (the token with the highest noisy
// aggregate cosine similarity). The K non-base tokens most similar to some
// base token are dropped before self-attention and get their output copied
// from that base token afterwards. Cross-attention is never pruned.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "optiprune/attn_core.hpp"
#include "optiprune/matrix.hpp"

namespace optiprune {

struct SimScores {
    Matrix similarity;                // N x N cosine similarity
    std::vector<double> scores;       // row sums of `similarity`
    std::vector<double> noisy_scores; // scores + N(0, sigma^2), one draw per token in index order
    double noise_sigma = 0.0;
};

/// Cosine similarities, aggregated scores and their noisy version.
/// A negative `noise_sigma` throws DomainError.
SimScores sim_scores(const TokenMatrix& tokens, double noise_sigma, std::uint64_t seed);

/// Per-patch argmax of `noisy_scores` over non-overlapping s x s patches,
/// returned in patch order (row-major over patches). Ties go to the smallest
/// flat index. Throws DomainError unless s divides both height and width.
std::vector<std::size_t> select_base_tokens(std::span<const double> noisy_scores,
                                            std::size_t height, std::size_t width,
                                            std::size_t patch_size);

struct PruneSelection {
    std::vector<std::size_t> prune_indices;  // ascending
    std::vector<std::size_t> recovery;       // recovery[i] is the base token for prune_indices[i]
};

/// The K non-base tokens whose best similarity to a base token is largest.
/// Ties on similarity go to the smaller token index, ties on the best base to
/// the smaller base index. Throws DomainError when K > N - |base|.
PruneSelection select_pruned_tokens(const Matrix& similarity, std::span<const std::size_t> base,
                                    std::size_t k);

/// K = round(gamma * N), clamped to N - P.
std::size_t prune_count(double gamma, std::size_t tokens, std::size_t base_tokens);

struct PruneConfig {
    double gamma = 0.4;
    std::size_t patch_size = 2;
    /// Noise on the aggregated scores; unset means 1% of mean |SimScore|.
    std::optional<double> noise_sigma;
    std::uint64_t seed = 0;
};

/// Immutable pruning plan for one token geometry.
class PruneCatalog {
public:
    PruneCatalog(std::size_t height, std::size_t width, std::vector<std::size_t> base_indices,
                 PruneSelection selection, double gamma, std::size_t patch_size,
                 double noise_sigma, std::uint64_t seed);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t tokens() const noexcept { return height_ * width_; }
    std::size_t pruned_count() const noexcept { return prune_indices_.size(); }

    /// One per patch, patch order.
    const std::vector<std::size_t>& base_indices() const noexcept { return base_indices_; }
    /// Ascending.
    const std::vector<std::size_t>& prune_indices() const noexcept { return prune_indices_; }
    /// Parallel to prune_indices().
    const std::vector<std::size_t>& recovery_map() const noexcept { return recovery_; }
    /// Complement of prune_indices(), ascending.
    const std::vector<std::size_t>& kept_indices() const noexcept { return kept_; }

    bool is_pruned(std::size_t token) const { return pruned_mask_.at(token); }

    double gamma() const noexcept { return gamma_; }
    std::size_t patch_size() const noexcept { return patch_size_; }
    double noise_sigma() const noexcept { return noise_sigma_; }
    std::uint64_t seed() const noexcept { return seed_; }

    friend bool operator==(const PruneCatalog& a, const PruneCatalog& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ &&
               a.base_indices_ == b.base_indices_ && a.prune_indices_ == b.prune_indices_ &&
               a.recovery_ == b.recovery_;
    }

private:
    std::size_t height_;
    std::size_t width_;
    std::vector<std::size_t> base_indices_;
    std::vector<std::size_t> prune_indices_;
    std::vector<std::size_t> recovery_;
    std::vector<std::size_t> kept_;
    std::vector<bool> pruned_mask_;
    double gamma_;
    std::size_t patch_size_;
    double noise_sigma_;
    std::uint64_t seed_;
};

/// Full catalog construction: scores, base tokens, pruned tokens.
PruneCatalog build_catalog(const TokenMatrix& tokens, const PruneConfig& config);

struct PrunedAttention {
    Matrix output;     // N x C in original token order, pruned rows recovered
    SelfAttnMap maps;  // over kept positions only
    MultiHeadTrace trace;
};

/// Self-attention over the kept tokens only (queries, keys and values), then
/// each pruned row copies the output row of its recovery base token. The
/// layer output is the projected attention result; residuals are the
/// caller's business. Throws ShapeError on a catalog/geometry mismatch.
PrunedAttention pruned_self_attention(const TokenMatrix& tokens, const PruneCatalog& catalog,
                                      const AttentionWeights& layer);

/// Unpruned reference: plain self-attention over all N tokens.
PrunedAttention self_attention(const TokenMatrix& tokens, const AttentionWeights& layer);

struct AttentionOpCount {
    std::uint64_t baseline = 0;
    std::uint64_t pruned = 0;
};

/// MACs of Q K^T plus weights @ V: 2 N^2 C unpruned, 2 (N - K)^2 C pruned.
AttentionOpCount attention_op_count(std::size_t tokens, std::size_t pruned, std::size_t channels);

}  // namespace optiprune
