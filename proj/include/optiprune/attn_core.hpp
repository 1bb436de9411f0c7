// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic attention kernels shared by the pruning, pipeline and mapper
// modules. Every reduction runs serially in index order so identical inputs
// give bit-identical outputs.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "optiprune/matrix.hpp"

namespace optiprune {

struct AttentionResult {
    Matrix output;   // n x c
    Matrix weights;  // n x m, rows sum to one
};

/// Row-wise softmax with max subtraction, in place.
void softmax_rows(Matrix& logits);

/// Backward pass of a row softmax: given probabilities P and dL/dP, returns dL/dlogits.
Matrix softmax_rows_vjp(const Matrix& probs, const Matrix& d_probs);

/// softmax(Q K^T * scale) V. `scale` defaults to 1/sqrt(d).
///
/// Throws ShapeError naming the axis when Q/K widths or K/V heights disagree,
/// DomainError on non-finite input.
AttentionResult softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                  std::optional<double> scale = std::nullopt);

/// Pairwise cosine similarity of the rows of `t`. Exactly symmetric; each
/// pair is computed once. Throws DomainError naming the first zero-norm row.
Matrix cosine_similarity_matrix(const Matrix& t);
Matrix cosine_similarity_matrix(const TokenMatrix& t);

/// Normalized size x size Gaussian kernel, weights exp(-(dx^2 + dy^2) / (2 sigma^2)).
Matrix gaussian_kernel(double sigma, std::size_t size = 3);

/// Convolve an H x W map with a normalized Gaussian kernel, replicate padding.
/// Constant maps are fixed points.
Matrix gaussian_smooth(const Matrix& map, double sigma, std::size_t kernel_size = 3);

/// Adjoint of gaussian_smooth: <smooth(x), y> == <x, smooth_transpose(y)>.
Matrix gaussian_smooth_transpose(const Matrix& grad, double sigma, std::size_t kernel_size = 3);

/// Projection weights of one multi-head attention layer.
///
/// Query/key projections map to `heads * head_dim` columns, the value
/// projection to `out_dim` columns split evenly across heads, and `out`
/// mixes the concatenated heads.
struct AttentionWeights {
    Matrix query;   // c_q x (heads * head_dim)
    Matrix key;     // c_kv x (heads * head_dim)
    Matrix value;   // c_kv x out_dim
    Matrix out;     // out_dim x out_dim
    std::size_t heads = 1;

    std::size_t head_dim() const noexcept { return query.cols() / heads; }
    std::size_t value_head_dim() const noexcept { return value.cols() / heads; }
};

/// Cached intermediates of a multi-head attention forward pass.
struct MultiHeadTrace {
    std::vector<Matrix> queries;  // per head, n x head_dim
    std::vector<Matrix> keys;     // per head, m x head_dim
    std::vector<Matrix> values;   // per head, m x value_head_dim
    std::vector<Matrix> weights;  // per head, n x m
    Matrix concat;                // n x out_dim, heads side by side
};

struct MultiHeadResult {
    Matrix output;        // n x out_dim, after the output projection
    Matrix mean_weights;  // n x m, averaged over heads
    MultiHeadTrace trace;
};

/// Multi-head attention with queries from `x_query` and keys/values from `x_kv`.
MultiHeadResult multi_head_attention(const Matrix& x_query, const Matrix& x_kv,
                                     const AttentionWeights& w);

/// Gradients with respect to the layer inputs.
struct MultiHeadInputGrads {
    Matrix d_query_input;  // n x c_q
    Matrix d_kv_input;     // m x c_kv
};

/// Backward pass of multi_head_attention for upstream gradients on the
/// output and on the head-averaged weights (either may be empty).
MultiHeadInputGrads multi_head_attention_vjp(const Matrix& x_query, const Matrix& x_kv,
                                             const AttentionWeights& w,
                                             const MultiHeadTrace& trace,
                                             const Matrix& d_output,
                                             const Matrix& d_mean_weights);

/// Per-text-token cross-attention maps. probs(p, i) is the mass text token i
/// receives at flat position p (row-major over height x width).
class CrossAttnMap {
public:
    CrossAttnMap(Matrix probs, std::size_t height, std::size_t width);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t positions() const noexcept { return probs_.rows(); }
    std::size_t text_tokens() const noexcept { return probs_.cols(); }
    const Matrix& probs() const noexcept { return probs_; }

    /// H x W map of one text token.
    Matrix token_map(std::size_t token) const;

    /// Entries in [0, 1] and each position's distribution over tokens sums to 1.
    bool satisfies_invariants(double tol = 1e-6) const;

private:
    Matrix probs_;
    std::size_t height_;
    std::size_t width_;
};

/// Self-attention maps over a (possibly pruned) set of grid positions.
///
/// `positions` lists the flat indices that take part, ascending; probs(a, b)
/// is the mass query positions[a] puts on key positions[b]. Positions outside
/// the set carry zero mass in the full-grid view.
class SelfAttnMap {
public:
    SelfAttnMap(Matrix probs, std::vector<std::size_t> positions, std::size_t height,
                std::size_t width);

    /// Unpruned maps over every grid position.
    static SelfAttnMap dense(Matrix probs, std::size_t height, std::size_t width);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    const Matrix& probs() const noexcept { return probs_; }
    const std::vector<std::size_t>& positions() const noexcept { return positions_; }

    /// Row index for a flat grid position, or nullopt when it is not present.
    std::optional<std::size_t> row_of(std::size_t position) const;

    /// H x W map of one query position, zeros at absent positions.
    Matrix position_map(std::size_t position) const;

    /// Nonnegative entries and each row sums to 1.
    bool satisfies_invariants(double tol = 1e-6) const;

private:
    Matrix probs_;
    std::vector<std::size_t> positions_;
    std::vector<std::ptrdiff_t> row_lookup_;
    std::size_t height_;
    std::size_t width_;
};

}  // namespace optiprune
