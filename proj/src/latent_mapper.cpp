// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/latent_mapper.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "optiprune/error.hpp"
#include "optiprune/rng.hpp"

namespace optiprune {

namespace {

struct ArgMax {
    double value = -std::numeric_limits<double>::infinity();
    std::size_t index = 0;
};

// First maximum in row-major order.
ArgMax argmax(const Matrix& map) {
    ArgMax best;
    const auto v = map.flat();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] > best.value) {
            best = {v[i], i};
        }
    }
    return best;
}

// First maximum among the listed (ascending) positions.
ArgMax argmax_over(const Matrix& map, const std::vector<std::size_t>& positions) {
    ArgMax best;
    const auto v = map.flat();
    for (std::size_t p : positions) {
        if (v[p] > best.value) {
            best = {v[p], p};
        }
    }
    return best;
}

void check_subjects(std::span<const std::size_t> subjects, std::size_t tokens,
                    std::size_t min_count) {
    if (subjects.size() < min_count) {
        throw DomainError("need at least " + std::to_string(min_count) + " subject token(s), got " +
                          std::to_string(subjects.size()));
    }
    for (std::size_t s : subjects) {
        if (s >= tokens) {
            throw DomainError("subject token " + std::to_string(s) + " outside prompt of length " +
                              std::to_string(tokens));
        }
    }
}

struct PreparedRow {
    Matrix grid;        // smoothed, masked to present positions, sums to one
    double mass = 0.0;  // sum before normalization
};

PreparedRow prepare_self_row(const SelfAttnMap& maps, std::size_t position, double sigma,
                             std::size_t kernel) {
    const Matrix smoothed = gaussian_smooth(maps.position_map(position), sigma, kernel);
    PreparedRow row{Matrix(maps.height(), maps.width()), 0.0};
    for (std::size_t p : maps.positions()) {
        row.grid.flat()[p] = smoothed.flat()[p];
        row.mass += smoothed.flat()[p];
    }
    for (std::size_t p : maps.positions()) {
        row.grid.flat()[p] /= row.mass;
    }
    return row;
}

struct ScoreWork {
    ValidityScores scores;
    std::vector<double> d_latent;  // gradient of s_cross + s_self
};

ScoreWork score_impl(std::span<const double> latent, const ToyPipeline& pipeline,
                     const PruneCatalog* prune, const MapperConfig& config, bool want_grad) {
    const auto& pc = pipeline.config();
    const auto& subjects = pipeline.prompt().subject_indices;
    check_subjects(subjects, pipeline.prompt().token_ids.size(), 2);

    DiagnosticTape tape;
    const DiagnosticMaps maps = pipeline.diagnose(latent, prune, want_grad ? &tape : nullptr);
    const std::size_t n_subj = subjects.size();

    std::vector<Matrix> cross_smoothed;
    std::vector<ArgMax> peaks;
    std::vector<std::size_t> centroids;
    for (std::size_t s : subjects) {
        cross_smoothed.push_back(
            gaussian_smooth(maps.cross.token_map(s), pc.smooth_sigma, pc.smooth_kernel));
        peaks.push_back(argmax(cross_smoothed.back()));
        centroids.push_back(argmax_over(cross_smoothed.back(), maps.self.positions()).index);
    }
    std::size_t weakest = 0;
    for (std::size_t i = 1; i < n_subj; ++i) {
        if (peaks[i].value < peaks[weakest].value) {
            weakest = i;
        }
    }

    std::vector<PreparedRow> rows;
    for (std::size_t c : centroids) {
        rows.push_back(prepare_self_row(maps.self, c, pc.smooth_sigma, pc.smooth_kernel));
    }

    ScoreWork work;
    work.scores.s_cross = 1.0 - peaks[weakest].value;
    const double pairs = static_cast<double>(n_subj * (n_subj - 1) / 2);
    double total = 0.0;
    for (std::size_t i = 0; i < n_subj; ++i) {
        for (std::size_t j = i + 1; j < n_subj; ++j) {
            total += overlap_ratio(rows[i].grid.flat(), rows[j].grid.flat());
        }
    }
    work.scores.s_self = total / pairs;
    work.scores.valid = work.scores.s_cross < config.tau_c && work.scores.s_self < config.tau_s;
    if (!want_grad) {
        return work;
    }

    const std::size_t h = pc.height;
    const std::size_t w = pc.width;
    Matrix d_cross(pc.tokens(), maps.cross.text_tokens());
    {
        Matrix d_map(h, w);
        d_map.flat()[peaks[weakest].index] = -1.0;
        const Matrix d_raw = gaussian_smooth_transpose(d_map, pc.smooth_sigma, pc.smooth_kernel);
        const std::size_t token = subjects[weakest];
        for (std::size_t p = 0; p < pc.tokens(); ++p) {
            d_cross(p, token) += d_raw.flat()[p];
        }
    }

    // d s_self / d (normalized rows)
    std::vector<Matrix> d_rows(n_subj, Matrix(h, w));
    for (std::size_t i = 0; i < n_subj; ++i) {
        for (std::size_t j = i + 1; j < n_subj; ++j) {
            const auto a = rows[i].grid.flat();
            const auto b = rows[j].grid.flat();
            double num = 0.0;
            double den = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                num += std::min(a[k], b[k]);
                den += a[k] + b[k];
            }
            auto da = d_rows[i].flat();
            auto db = d_rows[j].flat();
            const double inv = 1.0 / (pairs * den * den);
            for (std::size_t k = 0; k < a.size(); ++k) {
                const bool a_smaller = a[k] <= b[k];
                da[k] += ((a_smaller ? den : 0.0) - num) * inv;
                db[k] += ((a_smaller ? 0.0 : den) - num) * inv;
            }
        }
    }

    const auto& positions = maps.self.positions();
    Matrix d_self(positions.size(), positions.size());
    for (std::size_t i = 0; i < n_subj; ++i) {
        // through the renormalization and the mask
        const auto g = d_rows[i].flat();
        const auto a = rows[i].grid.flat();
        double dot = 0.0;
        for (std::size_t p : positions) {
            dot += g[p] * a[p];
        }
        Matrix d_masked(h, w);
        for (std::size_t p : positions) {
            d_masked.flat()[p] = (g[p] - dot) / rows[i].mass;
        }
        const Matrix d_grid =
            gaussian_smooth_transpose(d_masked, pc.smooth_sigma, pc.smooth_kernel);
        const std::size_t r = *maps.self.row_of(centroids[i]);
        for (std::size_t b = 0; b < positions.size(); ++b) {
            d_self(r, b) += d_grid.flat()[positions[b]];
        }
    }

    work.d_latent = pipeline.diagnose_vjp(tape, d_cross, d_self);
    return work;
}

double kl_terms(std::span<const double> mu, std::span<const double> log_sigma) {
    double acc = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
        acc += std::exp(2.0 * log_sigma[k]) + mu[k] * mu[k] - 1.0 - 2.0 * log_sigma[k];
    }
    return 0.5 * acc;
}

double loss_at(const NoiseDistribution& dist, const ToyPipeline& pipeline,
               const PruneCatalog* prune, const MapperConfig& config) {
    const ScoreWork w = score_impl(dist.transform(), pipeline, prune, config, false);
    return joint_loss(w.scores, kl_to_standard_normal(dist), config.lambda_kl);
}

}  // namespace

std::string to_string(GradientMode mode) {
    return mode == GradientMode::analytic ? "analytic" : "finite_difference";
}

GradientMode parse_gradient_mode(const std::string& text) {
    if (text == "analytic") {
        return GradientMode::analytic;
    }
    if (text == "finite_difference") {
        return GradientMode::finite_difference;
    }
    throw ConfigError("mapper.gradient_mode",
                      "expected analytic or finite_difference, got '" + text + "'");
}

void MapperConfig::validate() const {
    auto require = [](bool ok, const char* field, const char* what) {
        if (!ok) {
            throw ConfigError(std::string("mapper.") + field, what);
        }
    };
    require(tau_c > 0.0 && std::isfinite(tau_c), "tau_c", "must be positive");
    require(tau_s > 0.0 && std::isfinite(tau_s), "tau_s", "must be positive");
    require(lambda_kl >= 0.0 && std::isfinite(lambda_kl), "lambda_kl", "must be >= 0");
    require(inner_steps >= 1, "inner_steps", "must be >= 1");
    require(outer_rounds >= 1, "outer_rounds", "must be >= 1");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate",
            "must be >= 0");
    require(fd_epsilon > 0.0 && std::isfinite(fd_epsilon), "fd_epsilon", "must be positive");
}

NoiseDistribution NoiseDistribution::standard(std::uint64_t seed, std::size_t size) {
    NoiseDistribution d;
    d.mu.assign(size, 0.0);
    d.log_sigma.assign(size, 0.0);
    Rng rng(seed);
    d.z = rng.normal_vector(size);
    d.seed = seed;
    return d;
}

std::vector<double> NoiseDistribution::sigma() const {
    std::vector<double> s(log_sigma.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
        s[k] = std::exp(log_sigma[k]);
    }
    return s;
}

std::vector<double> NoiseDistribution::transform() const {
    std::vector<double> out(mu.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = mu[k] + std::exp(log_sigma[k]) * z[k];
    }
    return out;
}

std::uint64_t round_seed(std::uint64_t seed, std::size_t round) {
    return derive_seed(seed, 1000 + round);
}

double cross_attn_score(const CrossAttnMap& maps, std::span<const std::size_t> subjects) {
    check_subjects(subjects, maps.text_tokens(), 1);
    double weakest = std::numeric_limits<double>::infinity();
    for (std::size_t s : subjects) {
        weakest = std::min(weakest, argmax(maps.token_map(s)).value);
    }
    return 1.0 - weakest;
}

double overlap_ratio(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("overlap_ratio: maps have " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " cells");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        num += std::min(a[k], b[k]);
        den += a[k] + b[k];
    }
    if (!(den > 0.0)) {
        throw DomainError("overlap_ratio: both maps carry zero mass");
    }
    return num / den;
}

double self_attn_conflict(const SelfAttnMap& self_maps, const CrossAttnMap& cross_maps,
                          std::span<const std::size_t> subjects) {
    check_subjects(subjects, cross_maps.text_tokens(), 2);
    if (self_maps.height() != cross_maps.height() || self_maps.width() != cross_maps.width()) {
        throw ShapeError("self_attn_conflict: self and cross maps cover different grids");
    }
    std::vector<Matrix> rows;
    for (std::size_t s : subjects) {
        const std::size_t c = argmax_over(cross_maps.token_map(s), self_maps.positions()).index;
        rows.push_back(self_maps.position_map(c));
    }
    const double pairs = static_cast<double>(subjects.size() * (subjects.size() - 1) / 2);
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            total += overlap_ratio(rows[i].flat(), rows[j].flat());
        }
    }
    return total / pairs;
}

double kl_to_standard_normal(const NoiseDistribution& dist) {
    return kl_terms(dist.mu, dist.log_sigma);
}

double joint_loss(const ValidityScores& scores, double kl, double lambda_kl) {
    return scores.s_cross + scores.s_self + lambda_kl * kl;
}

CrossAttnMap smooth_cross_maps(const CrossAttnMap& maps, double sigma, std::size_t kernel) {
    Matrix probs(maps.positions(), maps.text_tokens());
    for (std::size_t t = 0; t < maps.text_tokens(); ++t) {
        const Matrix s = gaussian_smooth(maps.token_map(t), sigma, kernel);
        for (std::size_t p = 0; p < maps.positions(); ++p) {
            probs(p, t) = s.flat()[p];
        }
    }
    return CrossAttnMap(std::move(probs), maps.height(), maps.width());
}

SelfAttnMap smooth_self_maps(const SelfAttnMap& maps, double sigma, std::size_t kernel) {
    const auto& positions = maps.positions();
    Matrix probs(positions.size(), positions.size());
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const PreparedRow row = prepare_self_row(maps, positions[r], sigma, kernel);
        for (std::size_t b = 0; b < positions.size(); ++b) {
            probs(r, b) = row.grid.flat()[positions[b]];
        }
    }
    return SelfAttnMap(std::move(probs), positions, maps.height(), maps.width());
}

ValidityScores score_latent(std::span<const double> latent, const ToyPipeline& pipeline,
                            const PruneCatalog* prune, const MapperConfig& config) {
    return score_impl(latent, pipeline, prune, config, false).scores;
}

ValidityScores score_noise(const NoiseDistribution& dist, const ToyPipeline& pipeline,
                           const PruneCatalog* prune, const MapperConfig& config) {
    return score_latent(dist.transform(), pipeline, prune, config);
}

LossEvaluation evaluate_loss(const NoiseDistribution& dist, const ToyPipeline& pipeline,
                             const PruneCatalog* prune, const MapperConfig& config,
                             GradientMode mode) {
    const std::size_t n = dist.size();
    LossEvaluation ev;
    ev.kl = kl_to_standard_normal(dist);
    ev.grad_mu.assign(n, 0.0);
    ev.grad_log_sigma.assign(n, 0.0);

    if (mode == GradientMode::analytic) {
        const ScoreWork w = score_impl(dist.transform(), pipeline, prune, config, true);
        ev.scores = w.scores;
        ev.loss = joint_loss(ev.scores, ev.kl, config.lambda_kl);
        for (std::size_t k = 0; k < n; ++k) {
            const double sigma = std::exp(dist.log_sigma[k]);
            ev.grad_mu[k] = w.d_latent[k] + config.lambda_kl * dist.mu[k];
            ev.grad_log_sigma[k] =
                w.d_latent[k] * sigma * dist.z[k] + config.lambda_kl * (sigma * sigma - 1.0);
        }
        return ev;
    }

    ev.scores = score_noise(dist, pipeline, prune, config);
    ev.loss = joint_loss(ev.scores, ev.kl, config.lambda_kl);
    const double eps = config.fd_epsilon;
    NoiseDistribution probe = dist;
    auto central = [&](std::vector<double>& param, std::size_t k) {
        const double saved = param[k];
        param[k] = saved + eps;
        const double up = loss_at(probe, pipeline, prune, config);
        param[k] = saved - eps;
        const double down = loss_at(probe, pipeline, prune, config);
        param[k] = saved;
        return (up - down) / (2.0 * eps);
    };
    for (std::size_t k = 0; k < n; ++k) {
        ev.grad_mu[k] = central(probe.mu, k);
    }
    for (std::size_t k = 0; k < n; ++k) {
        ev.grad_log_sigma[k] = central(probe.log_sigma, k);
    }
    return ev;
}

MapperResult optimize_noise(const MapperConfig& config, const ToyPipeline& pipeline,
                            std::uint64_t seed, const PruneCatalog* prune) {
    config.validate();
    const std::size_t size = pipeline.config().latent_size();

    MapperResult result;
    double best_combined = std::numeric_limits<double>::infinity();
    bool converged = false;

    for (std::size_t round = 0; round < config.outer_rounds && !converged; ++round) {
        RoundRecord rec;
        rec.seed = round_seed(seed, round);
        NoiseDistribution dist = NoiseDistribution::standard(rec.seed, size);

        for (std::size_t step = 0;; ++step) {
            const bool may_update = step < config.inner_steps && config.learning_rate > 0.0;
            LossEvaluation ev;
            if (may_update) {
                ev = evaluate_loss(dist, pipeline, prune, config, config.gradient_mode);
            } else {
                ev.scores = score_noise(dist, pipeline, prune, config);
                ev.kl = kl_to_standard_normal(dist);
                ev.loss = joint_loss(ev.scores, ev.kl, config.lambda_kl);
            }
            rec.loss_trace.push_back(ev.loss);
            rec.s_cross_trace.push_back(ev.scores.s_cross);
            rec.s_self_trace.push_back(ev.scores.s_self);
            rec.final_scores = ev.scores;

            const bool better = ev.scores.combined() < best_combined;
            if (ev.scores.valid || better) {
                best_combined = ev.scores.combined();
                result.dist = dist;
                result.scores = ev.scores;
                result.kl = ev.kl;
                result.best_round = round;
                result.best_step = step;
            }
            if (ev.scores.valid) {
                rec.converged = true;
                converged = true;
                break;
            }
            if (step >= config.inner_steps) {
                break;
            }
            if (may_update) {
                for (std::size_t k = 0; k < size; ++k) {
                    dist.mu[k] -= config.learning_rate * ev.grad_mu[k];
                    dist.log_sigma[k] -= config.learning_rate * ev.grad_log_sigma[k];
                }
                ++rec.updates;
            }
        }
        result.rounds.push_back(std::move(rec));
    }
    result.trace = result.rounds[result.best_round].loss_trace;
    return result;
}

}  // namespace optiprune
