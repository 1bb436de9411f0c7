// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "optiprune/error.hpp"
#include "optiprune/latent_mapper.hpp"

using namespace optiprune;

namespace {

PipelineConfig small_config(std::uint64_t seed = 21) {
    PipelineConfig cfg;
    cfg.height = 4;
    cfg.width = 4;
    cfg.latent_channels = 4;
    cfg.text_channels = 4;
    cfg.heads = 2;
    cfg.num_steps = 5;
    cfg.seed = seed;
    return cfg;
}

double l2(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return l2(d) / std::max(l2(b), 1e-12);
}

}  // namespace

TEST_CASE("cross score is one minus the weakest subject peak") {
    // 2x2 grid, three text tokens; subjects 0 and 2 peak at 0.4 and 0.9.
    const Matrix probs = Matrix::from_rows(
        {{0.4, 0.5, 0.1}, {0.1, 0.0, 0.9}, {0.2, 0.4, 0.4}, {0.3, 0.3, 0.4}});
    const CrossAttnMap maps(probs, 2, 2);
    const std::vector<std::size_t> subjects{0, 2};
    CHECK(cross_attn_score(maps, subjects) == doctest::Approx(0.6).epsilon(1e-15));

    Matrix flat(64, 1, 1.0 / 64.0);
    const std::vector<std::size_t> only{0};
    CHECK(cross_attn_score(CrossAttnMap(flat, 8, 8), only) ==
          doctest::Approx(1.0 - 1.0 / 64.0).epsilon(1e-15));
    CHECK_THROWS_AS(cross_attn_score(maps, std::vector<std::size_t>{3}), DomainError);
}

TEST_CASE("overlap ratio fixtures") {
    const std::vector<double> a{0.5, 0.5, 0.0, 0.0}, b{0.0, 0.5, 0.5, 0.0},
        c{0.0, 0.0, 0.0, 1.0};
    CHECK(overlap_ratio(a, a) == 0.5);
    CHECK(overlap_ratio(a, b) == 0.25);
    CHECK(overlap_ratio(a, c) == 0.0);
    CHECK(overlap_ratio(a, b) == overlap_ratio(b, a));
    const std::vector<double> zero(4, 0.0);
    CHECK_THROWS_AS(overlap_ratio(zero, zero), DomainError);
    CHECK_THROWS_AS(overlap_ratio(a, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("self conflict reads rows at the subjects' cross peaks") {
    const Matrix cross = Matrix::from_rows({{0.9, 0.1}, {0.5, 0.5}, {0.3, 0.7}, {0.1, 0.9}});
    const Matrix self = Matrix::from_rows({{0.5, 0.5, 0.0, 0.0},
                                           {0.25, 0.25, 0.25, 0.25},
                                           {0.25, 0.25, 0.25, 0.25},
                                           {0.0, 0.5, 0.5, 0.0}});
    const std::vector<std::size_t> subjects{0, 1};
    CHECK(self_attn_conflict(SelfAttnMap::dense(self, 2, 2), CrossAttnMap(cross, 2, 2),
                             subjects) == 0.25);
    CHECK_THROWS_AS(self_attn_conflict(SelfAttnMap::dense(self, 2, 2), CrossAttnMap(cross, 2, 2),
                                       std::vector<std::size_t>{0}),
                    DomainError);

    // Restricted to kept positions {1, 2, 3}: subject 0 now peaks at position 1.
    const Matrix kept = Matrix::from_rows({{0.5, 0.5, 0.0}, {0.5, 0.5, 0.0}, {0.0, 0.0, 1.0}});
    CHECK(self_attn_conflict(SelfAttnMap(kept, {1, 2, 3}, 2, 2), CrossAttnMap(cross, 2, 2),
                             subjects) == 0.0);
}

TEST_CASE("KL divergence closed form") {
    NoiseDistribution d = NoiseDistribution::standard(1, 3);
    CHECK(kl_to_standard_normal(d) == 0.0);
    d.log_sigma = {std::log(2.0), 0.0, 0.0};
    CHECK(kl_to_standard_normal(d) == doctest::Approx(0.806852819440054690582767878542).epsilon(1e-14));
    d.log_sigma = {0.0, 0.0, 0.0};
    d.mu = {1.0, 0.0, -1.0};
    CHECK(kl_to_standard_normal(d) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("joint loss") {
    ValidityScores s{0.3, 0.2, false};
    CHECK(joint_loss(s, 2.0, 0.1) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(joint_loss(s, 0.0, 0.1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.combined() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("noise distribution transform and seeds") {
    NoiseDistribution d = NoiseDistribution::standard(5, 6);
    CHECK(d.transform() == d.z);
    CHECK(NoiseDistribution::standard(5, 6).z == d.z);
    CHECK(NoiseDistribution::standard(6, 6).z != d.z);
    d.mu.assign(6, 1.0);
    d.log_sigma.assign(6, std::log(0.5));
    const auto x = d.transform();
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(x[i] == doctest::Approx(1.0 + 0.5 * d.z[i]).epsilon(1e-15));
    }
    CHECK(round_seed(3, 0) != round_seed(3, 1));
    CHECK(round_seed(3, 1) != round_seed(4, 1));
}

TEST_CASE("scores are bounded, deterministic and agree across entry points") {
    const ToyPipeline p(small_config());
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const NoiseDistribution d = NoiseDistribution::standard(seed, p.config().latent_size());
        const ValidityScores a = score_noise(d, p);
        const ValidityScores b = score_latent(d.transform(), p);
        CHECK(a.s_cross == b.s_cross);
        CHECK(a.s_self == b.s_self);
        CHECK(a.s_cross >= 0.0);
        CHECK(a.s_cross <= 1.0);
        CHECK(a.s_self >= 0.0);
        CHECK(a.s_self <= 0.5);
        MapperConfig mc;
        CHECK(a.valid == (a.s_cross <= mc.tau_c && a.s_self <= mc.tau_s));

        PruneConfig pc;
        pc.gamma = 0.0;
        const PruneCatalog none = p.build_catalog(d.transform(), pc);
        const ValidityScores c = score_noise(d, p, &none);
        CHECK(c.s_cross == a.s_cross);
        CHECK(c.s_self == a.s_self);
    }
}

TEST_CASE("smoothed self maps stay on the kept positions and sum to one") {
    const Matrix kept = Matrix::from_rows({{0.5, 0.5, 0.0}, {0.2, 0.3, 0.5}, {0.0, 0.0, 1.0}});
    const SelfAttnMap m(kept, {1, 2, 3}, 2, 2);
    const SelfAttnMap s = smooth_self_maps(m, 0.5);
    CHECK(s.positions() == m.positions());
    CHECK(s.satisfies_invariants(1e-12));
}

TEST_CASE("analytic gradient matches central differences") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const ToyPipeline p(small_config(30 + seed));
        NoiseDistribution d = NoiseDistribution::standard(seed, p.config().latent_size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            d.mu[i] = 0.05 * std::sin(static_cast<double>(i));
            d.log_sigma[i] = 0.05 * std::cos(static_cast<double>(i));
        }
        MapperConfig mc;
        mc.fd_epsilon = 1e-5;
        const LossEvaluation an = evaluate_loss(d, p, nullptr, mc, GradientMode::analytic);
        const LossEvaluation fd = evaluate_loss(d, p, nullptr, mc, GradientMode::finite_difference);
        CHECK(an.loss == fd.loss);
        CHECK(relative_error(an.grad_mu, fd.grad_mu) < 1e-4);
        CHECK(relative_error(an.grad_log_sigma, fd.grad_log_sigma) < 1e-4);

        PruneConfig pc;
        pc.seed = seed;
        const PruneCatalog cat = p.build_catalog(d.transform(), pc);
        const LossEvaluation pan = evaluate_loss(d, p, &cat, mc, GradientMode::analytic);
        const LossEvaluation pfd = evaluate_loss(d, p, &cat, mc, GradientMode::finite_difference);
        CHECK(relative_error(pan.grad_mu, pfd.grad_mu) < 1e-4);
    }
}

TEST_CASE("thresholds of one accept the first draw") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.tau_c = 1.0;
    mc.tau_s = 1.0;
    const MapperResult r = optimize_noise(mc, p, 4);
    CHECK(r.rounds.size() == 1);
    CHECK(r.trace.size() == 1);
    CHECK(r.rounds[0].updates == 0);
    CHECK(r.rounds[0].converged);
    CHECK(r.kl == 0.0);
    CHECK(r.dist.z == NoiseDistribution::standard(round_seed(4, 0), p.config().latent_size()).z);
}

TEST_CASE("a zero learning rate leaves the noise untouched") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.tau_c = 1e-9;
    mc.tau_s = 1e-9;
    mc.learning_rate = 0.0;
    mc.inner_steps = 3;
    mc.outer_rounds = 2;
    const MapperResult r = optimize_noise(mc, p, 4);
    REQUIRE(r.rounds.size() == 2);
    for (const auto& rec : r.rounds) {
        CHECK(rec.updates == 0);
        REQUIRE(rec.loss_trace.size() == 4);
        for (double v : rec.loss_trace) CHECK(v == rec.loss_trace.front());
    }
    CHECK(r.kl == 0.0);
}

TEST_CASE("descent with a small step does not raise the loss") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.tau_c = 1e-9;
    mc.tau_s = 1e-9;
    mc.learning_rate = 1e-3;
    mc.inner_steps = 5;
    mc.outer_rounds = 1;
    for (GradientMode mode : {GradientMode::analytic, GradientMode::finite_difference}) {
        mc.gradient_mode = mode;
        const MapperResult r = optimize_noise(mc, p, 9);
        REQUIRE(r.trace.size() == 6);
        for (std::size_t i = 1; i < r.trace.size(); ++i) {
            CHECK(r.trace[i] <= r.trace[i - 1] + 1e-9);
        }
    }
}

TEST_CASE("without convergence the lowest combined score over all rounds wins") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.tau_c = 1e-9;
    mc.tau_s = 1e-9;
    mc.learning_rate = 0.5;
    mc.inner_steps = 4;
    mc.outer_rounds = 3;
    const MapperResult r = optimize_noise(mc, p, 2);
    REQUIRE(r.rounds.size() == 3);
    double best = 10.0;
    for (const auto& rec : r.rounds) {
        CHECK_FALSE(rec.converged);
        for (std::size_t i = 0; i < rec.s_cross_trace.size(); ++i) {
            best = std::min(best, rec.s_cross_trace[i] + rec.s_self_trace[i]);
        }
    }
    CHECK(r.scores.combined() == best);
    const auto& won = r.rounds[r.best_round];
    CHECK(won.s_cross_trace[r.best_step] + won.s_self_trace[r.best_step] == best);
    CHECK(r.trace == won.loss_trace);
    const ValidityScores again = score_noise(r.dist, p, nullptr, mc);
    CHECK(again.combined() == best);
}

TEST_CASE("optimization is deterministic") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.inner_steps = 5;
    mc.outer_rounds = 2;
    const MapperResult a = optimize_noise(mc, p, 13), b = optimize_noise(mc, p, 13);
    CHECK(a.trace == b.trace);
    CHECK(a.dist.mu == b.dist.mu);
    CHECK(a.dist.log_sigma == b.dist.log_sigma);
}

TEST_CASE("mapper config validation") {
    MapperConfig mc;
    mc.validate();
    mc.tau_c = 0.0;
    try {
        mc.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "mapper.tau_c");
    }
    mc = MapperConfig{};
    mc.outer_rounds = 0;
    CHECK_THROWS_AS(mc.validate(), ConfigError);
    CHECK(parse_gradient_mode("finite_difference") == GradientMode::finite_difference);
    CHECK(to_string(GradientMode::analytic) == "analytic");
    CHECK_THROWS_AS(parse_gradient_mode("adam"), ConfigError);
}

TEST_CASE("finite-difference descent on the small fixture reproduces its golden trace") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.tau_c = 1e-9;
    mc.tau_s = 1e-9;
    mc.learning_rate = 1e-3;
    mc.inner_steps = 10;
    mc.outer_rounds = 1;
    mc.gradient_mode = GradientMode::finite_difference;
    const std::vector<double> golden{
        1.2227296147012157, 1.2226929478100947, 1.2226562915375634, 1.2226196458843162,
        1.2225830108510458, 1.2225463864384443, 1.2225097726471998, 1.2224731694779998,
        1.2224365769315297, 1.2223999950084725, 1.22236342370951};
    const MapperResult r = optimize_noise(mc, p, 0);
    REQUIRE(r.trace.size() == golden.size());
    for (std::size_t i = 0; i < golden.size(); ++i) {
        CHECK(r.trace[i] == doctest::Approx(golden[i]).epsilon(1e-12));
        if (i > 0) CHECK(r.trace[i] <= r.trace[i - 1] + 1e-9);
    }
}

TEST_CASE("a zero learning rate returns the raw draw and its scores") {
    const ToyPipeline p(small_config());
    MapperConfig mc;
    mc.learning_rate = 0.0;
    mc.inner_steps = 2;
    mc.outer_rounds = 1;
    const MapperResult r = optimize_noise(mc, p, 8);
    const auto raw = NoiseDistribution::standard(round_seed(8, 0), p.config().latent_size());
    CHECK(r.dist.transform() == raw.z);
    const ValidityScores direct = score_noise(raw, p, nullptr, mc);
    CHECK(r.scores.s_cross == direct.s_cross);
    CHECK(r.scores.s_self == direct.s_self);
}

TEST_CASE("score_latent equals the score functions applied to the smoothed maps") {
    const ToyPipeline p(small_config(44));
    const auto& cfg = p.config();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto latent = NoiseDistribution::standard(seed, cfg.latent_size()).transform();
        PruneConfig pc;
        pc.seed = seed;
        const PruneCatalog cat = p.build_catalog(latent, pc);
        for (const PruneCatalog* prune : {static_cast<const PruneCatalog*>(nullptr), &cat}) {
            const DiagnosticMaps maps = p.diagnose(latent, prune);
            const CrossAttnMap cross = smooth_cross_maps(maps.cross, cfg.smooth_sigma);
            const SelfAttnMap self = smooth_self_maps(maps.self, cfg.smooth_sigma);
            const ValidityScores s = score_latent(latent, p, prune);
            CHECK(s.s_cross == cross_attn_score(cross, cfg.subject_tokens));
            CHECK(s.s_self == self_attn_conflict(self, cross, cfg.subject_tokens));
        }
    }
}

TEST_CASE("validity is a monotone threshold on the scores") {
    const ToyPipeline p(small_config());
    const auto d = NoiseDistribution::standard(3, p.config().latent_size());
    MapperConfig mc;
    const ValidityScores s = score_noise(d, p, nullptr, mc);
    bool was_valid = false;
    for (double tau = 0.05; tau <= 1.0; tau += 0.05) {
        mc.tau_c = tau;
        mc.tau_s = tau;
        const bool valid = score_noise(d, p, nullptr, mc).valid;
        CHECK(valid == (s.s_cross <= tau && s.s_self <= tau));
        CHECK((!was_valid || valid));
        was_valid = valid;
    }
}
