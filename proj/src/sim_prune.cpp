// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/sim_prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "optiprune/error.hpp"
#include "optiprune/rng.hpp"

namespace optiprune {

SimScores sim_scores(const TokenMatrix& tokens, double noise_sigma, std::uint64_t seed) {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw DomainError("sim_scores: noise sigma must be >= 0, got " +
                          std::to_string(noise_sigma));
    }
    SimScores out;
    out.similarity = cosine_similarity_matrix(tokens);
    out.noise_sigma = noise_sigma;
    const std::size_t n = tokens.tokens();
    out.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (double s : out.similarity.row(i)) {
            acc += s;
        }
        out.scores[i] = acc;
    }
    out.noisy_scores = out.scores;
    if (noise_sigma > 0.0) {
        Rng rng(seed);
        for (auto& s : out.noisy_scores) {
            s += noise_sigma * rng.normal();
        }
    }
    return out;
}

std::vector<std::size_t> select_base_tokens(std::span<const double> noisy_scores,
                                            std::size_t height, std::size_t width,
                                            std::size_t patch_size) {
    if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
        throw DomainError("select_base_tokens: patch size " + std::to_string(patch_size) +
                          " does not tile a " + std::to_string(height) + "x" +
                          std::to_string(width) + " grid");
    }
    if (noisy_scores.size() != height * width) {
        throw ShapeError("select_base_tokens: " + std::to_string(noisy_scores.size()) +
                         " scores for a " + std::to_string(height) + "x" + std::to_string(width) +
                         " grid");
    }
    std::vector<std::size_t> base;
    base.reserve((height / patch_size) * (width / patch_size));
    for (std::size_t py = 0; py < height; py += patch_size) {
        for (std::size_t px = 0; px < width; px += patch_size) {
            std::size_t best = py * width + px;
            // Row-major scan visits flat indices in increasing order, so a
            // strict comparison keeps the smallest index on ties.
            for (std::size_t y = py; y < py + patch_size; ++y) {
                for (std::size_t x = px; x < px + patch_size; ++x) {
                    const std::size_t idx = y * width + x;
                    if (noisy_scores[idx] > noisy_scores[best]) {
                        best = idx;
                    }
                }
            }
            base.push_back(best);
        }
    }
    return base;
}

PruneSelection select_pruned_tokens(const Matrix& similarity, std::span<const std::size_t> base,
                                    std::size_t k) {
    const std::size_t n = similarity.rows();
    if (similarity.cols() != n) {
        throw ShapeError("select_pruned_tokens: similarity matrix is not square");
    }
    std::vector<bool> is_base(n, false);
    for (std::size_t b : base) {
        if (b >= n) {
            throw DomainError("select_pruned_tokens: base index " + std::to_string(b) +
                              " out of range");
        }
        is_base[b] = true;
    }
    std::vector<std::size_t> sorted_base(base.begin(), base.end());
    std::sort(sorted_base.begin(), sorted_base.end());
    sorted_base.erase(std::unique(sorted_base.begin(), sorted_base.end()), sorted_base.end());

    const std::size_t candidates = n - sorted_base.size();
    if (k > candidates) {
        throw DomainError("select_pruned_tokens: K=" + std::to_string(k) + " exceeds the " +
                          std::to_string(candidates) + " non-base tokens");
    }
    if (k == 0) {
        return {};
    }

    struct Candidate {
        double best_sim;
        std::size_t token;
        std::size_t base;
    };
    std::vector<Candidate> pool;
    pool.reserve(candidates);
    for (std::size_t i = 0; i < n; ++i) {
        if (is_base[i]) {
            continue;
        }
        // Ascending base order with strict '>' keeps the smallest base on ties.
        Candidate c{similarity(i, sorted_base.front()), i, sorted_base.front()};
        for (std::size_t b : sorted_base) {
            if (similarity(i, b) > c.best_sim) {
                c.best_sim = similarity(i, b);
                c.base = b;
            }
        }
        pool.push_back(c);
    }
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end(),
                      [](const Candidate& a, const Candidate& b) {
                          if (a.best_sim != b.best_sim) {
                              return a.best_sim > b.best_sim;
                          }
                          return a.token < b.token;
                      });
    pool.resize(k);
    std::sort(pool.begin(), pool.end(),
              [](const Candidate& a, const Candidate& b) { return a.token < b.token; });

    PruneSelection sel;
    for (const auto& c : pool) {
        sel.prune_indices.push_back(c.token);
        sel.recovery.push_back(c.base);
    }
    return sel;
}

std::size_t prune_count(double gamma, std::size_t tokens, std::size_t base_tokens) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw DomainError("prune_count: gamma must lie in [0, 1], got " + std::to_string(gamma));
    }
    const auto k = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(tokens)));
    return std::min(k, tokens - base_tokens);
}

PruneCatalog::PruneCatalog(std::size_t height, std::size_t width,
                           std::vector<std::size_t> base_indices, PruneSelection selection,
                           double gamma, std::size_t patch_size, double noise_sigma,
                           std::uint64_t seed)
    : height_(height),
      width_(width),
      base_indices_(std::move(base_indices)),
      prune_indices_(std::move(selection.prune_indices)),
      recovery_(std::move(selection.recovery)),
      pruned_mask_(height * width, false),
      gamma_(gamma),
      patch_size_(patch_size),
      noise_sigma_(noise_sigma),
      seed_(seed) {
    const std::size_t n = height_ * width_;
    if (recovery_.size() != prune_indices_.size()) {
        throw ShapeError("PruneCatalog: recovery map and prune set differ in size");
    }
    std::vector<bool> is_base(n, false);
    for (std::size_t b : base_indices_) {
        if (b >= n) {
            throw DomainError("PruneCatalog: base index out of range");
        }
        is_base[b] = true;
    }
    for (std::size_t i = 0; i < prune_indices_.size(); ++i) {
        const std::size_t p = prune_indices_[i];
        if (p >= n || is_base[p] || pruned_mask_[p] ||
            (i > 0 && p <= prune_indices_[i - 1])) {
            throw DomainError("PruneCatalog: prune indices must be ascending, unique and disjoint "
                              "from base tokens");
        }
        if (recovery_[i] >= n || !is_base[recovery_[i]]) {
            throw DomainError("PruneCatalog: token " + std::to_string(p) +
                              " recovers from a non-base token");
        }
        pruned_mask_[p] = true;
    }
    kept_.reserve(n - prune_indices_.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!pruned_mask_[i]) {
            kept_.push_back(i);
        }
    }
}

PruneCatalog build_catalog(const TokenMatrix& tokens, const PruneConfig& config) {
    const std::size_t n = tokens.tokens();
    double sigma = 0.0;
    SimScores s;
    if (config.noise_sigma) {
        sigma = *config.noise_sigma;
        s = sim_scores(tokens, sigma, config.seed);
    } else {
        s = sim_scores(tokens, 0.0, config.seed);
        double mean_abs = 0.0;
        for (double v : s.scores) {
            mean_abs += std::abs(v);
        }
        mean_abs /= static_cast<double>(n);
        sigma = 0.01 * mean_abs;
        if (sigma > 0.0) {
            Rng rng(config.seed);
            for (auto& v : s.noisy_scores) {
                v += sigma * rng.normal();
            }
        }
    }
    auto base = select_base_tokens(s.noisy_scores, tokens.height(), tokens.width(),
                                   config.patch_size);
    const std::size_t k = prune_count(config.gamma, n, base.size());
    auto sel = select_pruned_tokens(s.similarity, base, k);
    return PruneCatalog(tokens.height(), tokens.width(), std::move(base), std::move(sel),
                        config.gamma, config.patch_size, sigma, config.seed);
}

PrunedAttention pruned_self_attention(const TokenMatrix& tokens, const PruneCatalog& catalog,
                                      const AttentionWeights& layer) {
    if (catalog.height() != tokens.height() || catalog.width() != tokens.width()) {
        throw ShapeError("pruned_self_attention: catalog built for a " +
                         std::to_string(catalog.height()) + "x" + std::to_string(catalog.width()) +
                         " grid, tokens are " + std::to_string(tokens.height()) + "x" +
                         std::to_string(tokens.width()));
    }
    const auto& kept = catalog.kept_indices();
    const Matrix kept_tokens = gather_rows(tokens.data(), kept);
    MultiHeadResult mha = multi_head_attention(kept_tokens, kept_tokens, layer);

    Matrix output(tokens.tokens(), mha.output.cols());
    for (std::size_t r = 0; r < kept.size(); ++r) {
        const auto src = mha.output.row(r);
        std::copy(src.begin(), src.end(), output.row(kept[r]).begin());
    }
    const auto& pruned = catalog.prune_indices();
    const auto& recovery = catalog.recovery_map();
    for (std::size_t i = 0; i < pruned.size(); ++i) {
        const auto src = output.row(recovery[i]);
        std::copy(src.begin(), src.end(), output.row(pruned[i]).begin());
    }
    return {std::move(output),
            SelfAttnMap(std::move(mha.mean_weights), kept, tokens.height(), tokens.width()),
            std::move(mha.trace)};
}

PrunedAttention self_attention(const TokenMatrix& tokens, const AttentionWeights& layer) {
    MultiHeadResult mha = multi_head_attention(tokens.data(), tokens.data(), layer);
    return {std::move(mha.output),
            SelfAttnMap::dense(std::move(mha.mean_weights), tokens.height(), tokens.width()),
            std::move(mha.trace)};
}

AttentionOpCount attention_op_count(std::size_t tokens, std::size_t pruned, std::size_t channels) {
    if (pruned > tokens) {
        throw DomainError("attention_op_count: K=" + std::to_string(pruned) + " exceeds N=" +
                          std::to_string(tokens));
    }
    const auto n = static_cast<std::uint64_t>(tokens);
    const auto kept = static_cast<std::uint64_t>(tokens - pruned);
    const auto c = static_cast<std::uint64_t>(channels);
    return {2 * n * n * c, 2 * kept * kept * c};
}

}  // namespace optiprune
