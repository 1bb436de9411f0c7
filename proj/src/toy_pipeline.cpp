// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/toy_pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <string>

#include "optiprune/error.hpp"
#include "optiprune/rng.hpp"

namespace optiprune {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kEmbeddingStream = 1;
constexpr std::uint64_t kCrossStream = 2;
constexpr std::uint64_t kSelfStream = 3;
constexpr std::uint64_t kMlpStream = 4;
constexpr std::uint64_t kSamplerStream = 5;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (auto& v : m.flat()) {
        v = scale * rng.normal();
    }
    return m;
}

AttentionWeights random_attention(std::uint64_t seed, std::size_t c_query, std::size_t c_kv,
                                  std::size_t width, std::size_t heads, double gain) {
    Rng rng(seed);
    AttentionWeights w;
    w.heads = heads;
    w.query = random_matrix(rng, c_query, width, gain / std::sqrt(static_cast<double>(c_query)));
    w.key = random_matrix(rng, c_kv, width, gain / std::sqrt(static_cast<double>(c_kv)));
    w.value = random_matrix(rng, c_kv, width, 1.0 / std::sqrt(static_cast<double>(c_kv)));
    w.out = random_matrix(rng, width, width, 1.0 / std::sqrt(static_cast<double>(width)));
    return w;
}

DenoiserWeights random_weights(const PipelineConfig& cfg) {
    const std::size_t c = cfg.latent_channels;
    DenoiserWeights w;
    w.cross = random_attention(derive_seed(cfg.seed, kCrossStream), c, cfg.text_channels, c,
                               cfg.heads, cfg.attn_gain);
    w.self = random_attention(derive_seed(cfg.seed, kSelfStream), c, c, c, cfg.heads,
                              cfg.attn_gain);
    Rng rng(derive_seed(cfg.seed, kMlpStream));
    w.mlp_in = random_matrix(rng, c, 2 * c, 1.0 / std::sqrt(static_cast<double>(c)));
    w.mlp_out = random_matrix(rng, 2 * c, c, 0.5 / std::sqrt(static_cast<double>(2 * c)));
    return w;
}

void require(bool ok, const char* field, const std::string& what) {
    if (!ok) {
        throw ConfigError(std::string("pipeline.") + field, what);
    }
}

std::uint64_t fnv1a(const unsigned char* bytes, std::size_t n, std::uint64_t h) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t h) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace

void PipelineConfig::validate() const {
    require(height >= 1, "height", "must be >= 1");
    require(width >= 1, "width", "must be >= 1");
    require(latent_channels >= 1, "channels", "must be >= 1");
    require(text_channels >= 1, "text_channels", "must be >= 1");
    require(heads >= 1 && latent_channels % heads == 0, "heads",
            "must be >= 1 and divide the channel count");
    require(vocab_size >= 1, "vocab", "must be >= 1");
    require(num_steps >= 1, "steps", "must be >= 1");
    require(std::isfinite(guidance_scale), "guidance", "must be finite");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "beta_start",
            "need 0 < beta_start <= beta_end < 1");
    require(!prompt_tokens.empty() && prompt_tokens.size() <= 8, "prompt",
            "must hold between 1 and 8 tokens");
    for (std::size_t id : prompt_tokens) {
        require(id < vocab_size, "prompt", "token id " + std::to_string(id) + " >= vocab size");
    }
    require(!subject_tokens.empty(), "subjects", "must not be empty");
    for (std::size_t s : subject_tokens) {
        require(s < prompt_tokens.size(), "subjects",
                "index " + std::to_string(s) + " outside prompt of length " +
                    std::to_string(prompt_tokens.size()));
    }
    require(attn_gain > 0.0 && std::isfinite(attn_gain), "attn_gain", "must be positive");
    require(smooth_sigma > 0.0 && std::isfinite(smooth_sigma), "smooth_sigma",
            "must be positive");
    require(smooth_kernel % 2 == 1, "smooth_kernel", "must be odd");
}

std::vector<double> classifier_free_guidance(std::span<const double> eps_uncond,
                                             std::span<const double> eps_cond, double guidance) {
    if (eps_uncond.size() != eps_cond.size()) {
        throw ShapeError("classifier_free_guidance: prediction lengths differ");
    }
    std::vector<double> out(eps_cond.size());
    const double rest = 1.0 - guidance;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = guidance * eps_cond[i] + rest * eps_uncond[i];
    }
    return out;
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t channels) {
    std::vector<double> emb(channels);
    const double tt = static_cast<double>(t);
    for (std::size_t k = 0; k < channels; ++k) {
        const double i = static_cast<double>(k / 2);
        const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(channels));
        emb[k] = (k % 2 == 0) ? std::sin(tt * freq) : std::cos(tt * freq);
    }
    return emb;
}

ToyPipeline::ToyPipeline(PipelineConfig config) : ToyPipeline(config, [&] {
    config.validate();
    return random_weights(config);
}()) {}

ToyPipeline::ToyPipeline(PipelineConfig config, DenoiserWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
    config_.validate();
    const std::size_t c = config_.latent_channels;
    if (weights_.cross.query.rows() != c || weights_.cross.key.rows() != config_.text_channels ||
        weights_.cross.value.cols() != c || weights_.self.query.rows() != c ||
        weights_.self.value.cols() != c || weights_.mlp_in.rows() != c ||
        weights_.mlp_out.cols() != c) {
        throw ShapeError("ToyPipeline: weights do not match channels=" + std::to_string(c) +
                         ", text_channels=" + std::to_string(config_.text_channels));
    }

    Rng rng(derive_seed(config_.seed, kEmbeddingStream));
    const Matrix table = random_matrix(rng, config_.vocab_size, config_.text_channels, 1.0);
    prompt_.token_ids = config_.prompt_tokens;
    prompt_.subject_indices = config_.subject_tokens;
    prompt_.embeddings = gather_rows(table, config_.prompt_tokens);
    null_text_ = Matrix(config_.prompt_tokens.size(), config_.text_channels);

    const std::size_t steps = config_.num_steps;
    betas_.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const double frac =
            steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
        betas_[t] = config_.beta_start + (config_.beta_end - config_.beta_start) * frac;
    }
}

void ToyPipeline::check_latent(std::span<const double> latent) const {
    if (latent.size() != config_.latent_size()) {
        throw ShapeError("ToyPipeline: latent has " + std::to_string(latent.size()) +
                         " values, expected H*W*C = " + std::to_string(config_.latent_size()));
    }
}

Matrix ToyPipeline::latent_tokens(std::span<const double> latent, std::size_t t) const {
    check_latent(latent);
    if (t < 1 || t > config_.num_steps) {
        throw DomainError("ToyPipeline: timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(config_.num_steps) + "]");
    }
    const std::size_t c = config_.latent_channels;
    const auto emb = timestep_embedding(t, c);
    Matrix x(config_.tokens(), c);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        for (std::size_t k = 0; k < c; ++k) {
            x(n, k) = latent[n * c + k] + emb[k];
        }
    }
    return x;
}

DenoiserOutput ToyPipeline::denoiser_forward(std::span<const double> latent, const Matrix& text,
                                             std::size_t t, const PruneCatalog* prune) const {
    if (text.cols() != config_.text_channels || text.rows() == 0) {
        throw ShapeError("denoiser_forward: text embeddings have " + std::to_string(text.cols()) +
                         " channels, expected " + std::to_string(config_.text_channels));
    }
    const Matrix x = latent_tokens(latent, t);

    MultiHeadResult cross = multi_head_attention(x, text, weights_.cross);
    Matrix h1 = x;
    add_inplace(h1, cross.output);

    const TokenMatrix h1_tokens(h1, config_.height, config_.width);
    const auto start = std::chrono::steady_clock::now();
    PrunedAttention self = prune ? pruned_self_attention(h1_tokens, *prune, weights_.self)
                                 : self_attention(h1_tokens, weights_.self);
    const auto stop = std::chrono::steady_clock::now();

    Matrix h2 = std::move(h1);
    add_inplace(h2, self.output);

    Matrix hidden = matmul(h2, weights_.mlp_in);
    for (auto& v : hidden.flat()) {
        v = std::tanh(v);
    }
    Matrix h3 = std::move(h2);
    add_inplace(h3, matmul(hidden, weights_.mlp_out));

    return {std::vector<double>(h3.values()),
            CrossAttnMap(std::move(cross.mean_weights), config_.height, config_.width),
            std::move(self.maps),
            std::chrono::duration<double, std::milli>(stop - start).count()};
}

DenoiserOutput ToyPipeline::denoiser_forward(std::span<const double> latent, std::size_t t,
                                             const PruneCatalog* prune) const {
    return denoiser_forward(latent, prompt_.embeddings, t, prune);
}

SampleResult ToyPipeline::sample(std::span<const double> initial_noise,
                                 const PruneCatalog* prune) const {
    check_latent(initial_noise);
    const std::size_t n = config_.tokens();
    const std::size_t k = prune ? prune->pruned_count() : 0;
    const AttentionOpCount per_pass = attention_op_count(n, k, config_.latent_channels);

    SampleResult res;
    res.z0.assign(initial_noise.begin(), initial_noise.end());
    auto& z = res.z0;
    Rng rng(derive_seed(config_.seed, kSamplerStream));

    double alpha_bar = 1.0;
    std::vector<double> alpha_bars(config_.num_steps);
    for (std::size_t i = 0; i < config_.num_steps; ++i) {
        alpha_bar *= 1.0 - betas_[i];
        alpha_bars[i] = alpha_bar;
    }

    for (std::size_t t = config_.num_steps; t >= 1; --t) {
        const DenoiserOutput cond = denoiser_forward(z, prompt_.embeddings, t, prune);
        const DenoiserOutput uncond = denoiser_forward(z, null_text_, t, prune);
        res.report.denoiser_calls += 2;
        res.report.self_attn_macs += 2 * per_pass.pruned;
        res.report.self_attn_macs_baseline += 2 * per_pass.baseline;
        res.report.self_attn_ms += cond.self_attn_ms + uncond.self_attn_ms;

        const auto eps = classifier_free_guidance(uncond.eps, cond.eps, config_.guidance_scale);
        const double beta = betas_[t - 1];
        const double coef = beta / std::sqrt(1.0 - alpha_bars[t - 1]);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        const double noise_scale = t > 1 ? std::sqrt(beta) : 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = (z[i] - coef * eps[i]) * inv_sqrt_alpha;
            if (t > 1) {
                z[i] += noise_scale * rng.normal();
            }
        }
    }
    return res;
}

TokenMatrix ToyPipeline::self_attention_input(std::span<const double> latent) const {
    const Matrix x = latent_tokens(latent, config_.num_steps);
    MultiHeadResult cross = multi_head_attention(x, prompt_.embeddings, weights_.cross);
    Matrix h1 = x;
    add_inplace(h1, cross.output);
    return TokenMatrix(std::move(h1), config_.height, config_.width);
}

PruneCatalog ToyPipeline::build_catalog(std::span<const double> latent,
                                        const PruneConfig& config) const {
    return optiprune::build_catalog(self_attention_input(latent), config);
}

DiagnosticMaps ToyPipeline::diagnose(std::span<const double> latent, const PruneCatalog* prune,
                                     DiagnosticTape* tape) const {
    const std::size_t n = config_.tokens();
    Matrix x = latent_tokens(latent, config_.num_steps);
    MultiHeadResult cross = multi_head_attention(x, prompt_.embeddings, weights_.cross);
    Matrix h1 = x;
    add_inplace(h1, cross.output);

    std::vector<std::size_t> kept;
    if (prune) {
        if (prune->height() != config_.height || prune->width() != config_.width) {
            throw ShapeError("diagnose: catalog geometry does not match the pipeline");
        }
        kept = prune->kept_indices();
    } else {
        kept.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            kept[i] = i;
        }
    }
    Matrix self_input = gather_rows(h1, kept);
    MultiHeadResult self = multi_head_attention(self_input, self_input, weights_.self);

    DiagnosticMaps maps{CrossAttnMap(std::move(cross.mean_weights), config_.height, config_.width),
                        SelfAttnMap(std::move(self.mean_weights), kept, config_.height,
                                    config_.width)};
    if (tape) {
        tape->tokens = std::move(x);
        tape->text = prompt_.embeddings;
        tape->cross = std::move(cross.trace);
        tape->self_input = std::move(self_input);
        tape->self = std::move(self.trace);
        tape->kept = std::move(kept);
    }
    return maps;
}

std::vector<double> ToyPipeline::diagnose_vjp(const DiagnosticTape& tape, const Matrix& d_cross,
                                              const Matrix& d_self) const {
    const MultiHeadInputGrads gs = multi_head_attention_vjp(
        tape.self_input, tape.self_input, weights_.self, tape.self, Matrix(), d_self);
    Matrix d_h1(config_.tokens(), config_.latent_channels);
    for (std::size_t r = 0; r < tape.kept.size(); ++r) {
        auto dst = d_h1.row(tape.kept[r]);
        const auto a = gs.d_query_input.row(r);
        const auto b = gs.d_kv_input.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) {
            dst[c] = a[c] + b[c];
        }
    }
    const MultiHeadInputGrads gc = multi_head_attention_vjp(tape.tokens, tape.text, weights_.cross,
                                                            tape.cross, d_h1, d_cross);
    Matrix d_x = std::move(d_h1);
    add_inplace(d_x, gc.d_query_input);
    return std::vector<double>(d_x.values());
}

std::string checksum(std::span<const double> values) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (double v : values) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) {
            bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
        }
        h = fnv1a(bytes, 8, h);
    }
    return hex64(h);
}

std::string checksum(std::span<const std::size_t> values) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t v : values) {
        const auto u = static_cast<std::uint64_t>(v);
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) {
            bytes[i] = static_cast<unsigned char>(u >> (8 * i));
        }
        h = fnv1a(bytes, 8, h);
    }
    return hex64(h);
}

}  // namespace optiprune
