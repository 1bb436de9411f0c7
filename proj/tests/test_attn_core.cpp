// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <string>

#include "doctest.h"
#include "optiprune/attn_core.hpp"
#include "optiprune/error.hpp"

using namespace optiprune;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (auto& v : m.flat()) {
        v = dist(rng);
    }
    return m;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a.flat()[i] * b.flat()[i];
    }
    return acc;
}

}  // namespace

TEST_CASE("softmax_attention matches the hand-evaluated two-token case") {
    // sigma = 1 / (1 + exp(-1/sqrt(2))), evaluated with mpmath at 30 digits.
    const double sigma = 0.669761549326656925616794945834;
    const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix v = Matrix::from_rows({{1}, {2}});
    const auto res = softmax_attention(eye, eye, v);

    CHECK(res.weights(0, 0) == doctest::Approx(sigma).epsilon(1e-14));
    CHECK(res.weights(0, 1) == doctest::Approx(1 - sigma).epsilon(1e-14));
    CHECK(res.weights(1, 0) == res.weights(0, 1));
    CHECK(res.weights(1, 1) == res.weights(0, 0));
    CHECK(res.output(0, 0) == doctest::Approx(1.33023845067334307438).epsilon(1e-14));
    CHECK(res.output(1, 0) == doctest::Approx(1.66976154932665692562).epsilon(1e-14));
}

TEST_CASE("single key forces weight one") {
    std::mt19937_64 rng(5);
    const Matrix q = random_matrix(rng, 4, 3);
    const Matrix k = random_matrix(rng, 1, 3);
    const Matrix v = random_matrix(rng, 1, 2);
    const auto res = softmax_attention(q, k, v);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(res.weights(r, 0) == 1.0);
        CHECK(res.output(r, 0) == v(0, 0));
        CHECK(res.output(r, 1) == v(0, 1));
    }
}

TEST_CASE("zero queries give uniform weights") {
    std::mt19937_64 rng(6);
    for (std::size_t m : {1u, 3u, 7u}) {
        const auto res = softmax_attention(Matrix(2, 4), random_matrix(rng, m, 4),
                                           random_matrix(rng, m, 1));
        for (double w : res.weights.flat()) {
            CHECK(w == 1.0 / static_cast<double>(m));
        }
    }
}

TEST_CASE("softmax_attention reports mismatched axes") {
    const Matrix q(2, 3), k(4, 2), v(4, 1), v_bad(3, 1);
    try {
        softmax_attention(q, k, v);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("Q has d=3") != std::string::npos);
    }
    try {
        softmax_attention(Matrix(2, 2), k, v_bad);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("V has m=3") != std::string::npos);
    }
    CHECK_THROWS_AS(softmax_attention(Matrix(2, 0), Matrix(2, 0), Matrix(2, 1)), ShapeError);
    Matrix nan_q(1, 2);
    nan_q(0, 0) = std::nan("");
    CHECK_THROWS_AS(softmax_attention(nan_q, Matrix(1, 2), Matrix(1, 1)), DomainError);
}

TEST_CASE("softmax rows sum to one over random shapes") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> dim(1, 12);
    for (int trial = 0; trial < 150; ++trial) {
        const std::size_t n = dim(rng), m = dim(rng), d = dim(rng), c = dim(rng);
        const auto res = softmax_attention(random_matrix(rng, n, d, 3.0),
                                           random_matrix(rng, m, d, 3.0), random_matrix(rng, m, c));
        for (std::size_t r = 0; r < n; ++r) {
            double sum = 0.0;
            for (double w : res.weights.row(r)) {
                CHECK(w >= 0.0);
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("attention is bit-exact across repeated calls") {
    std::mt19937_64 rng(8);
    const Matrix q = random_matrix(rng, 9, 4), k = random_matrix(rng, 11, 4),
                 v = random_matrix(rng, 11, 5);
    const auto a = softmax_attention(q, k, v);
    const auto b = softmax_attention(q, k, v);
    CHECK(a.weights == b.weights);
    CHECK(a.output == b.output);
}

TEST_CASE("cosine similarity fixtures") {
    const Matrix eye = cosine_similarity_matrix(Matrix::from_rows({{1, 0}, {0, 1}}));
    CHECK(eye(0, 0) == 1.0);
    CHECK(eye(1, 1) == 1.0);
    CHECK(eye(0, 1) == 0.0);

    const Matrix dup = cosine_similarity_matrix(Matrix::from_rows({{0.3, -2.0}, {0.3, -2.0}}));
    for (double v : dup.flat()) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    }

    const Matrix tilt = cosine_similarity_matrix(Matrix::from_rows({{1, 0}, {1, 1}}));
    CHECK(tilt(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(tilt(1, 0) == tilt(0, 1));
}

TEST_CASE("cosine similarity rejects zero rows by index") {
    try {
        cosine_similarity_matrix(Matrix::from_rows({{1, 2}, {3, 4}, {0, 0}}));
        FAIL("expected DomainError");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
}

TEST_CASE("cosine similarity is symmetric with unit diagonal on random tokens") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix t = random_matrix(rng, 1 + trial % 17, 1 + trial % 5);
        const Matrix s = cosine_similarity_matrix(TokenMatrix(t, t.rows(), 1));
        for (std::size_t i = 0; i < s.rows(); ++i) {
            CHECK(std::abs(s(i, i) - 1.0) <= 1e-6);
            for (std::size_t j = 0; j < s.cols(); ++j) {
                CHECK(s(i, j) == s(j, i));
                CHECK(s(i, j) >= -1.0);
                CHECK(s(i, j) <= 1.0);
            }
        }
    }
}

TEST_CASE("gaussian kernel weights for sigma 0.5") {
    // exp(-(dx^2+dy^2)/0.5) normalized, evaluated with mpmath.
    const Matrix k = gaussian_kernel(0.5);
    CHECK(k(1, 1) == doctest::Approx(0.619347030557177290235).epsilon(1e-14));
    CHECK(k(0, 1) == doctest::Approx(0.0838195058022106043718).epsilon(1e-14));
    CHECK(k(0, 0) == doctest::Approx(0.0113437365584950730694).epsilon(1e-14));
}

TEST_CASE("gaussian_smooth edge cases") {
    SUBCASE("constant maps are fixed points") {
        const Matrix c(6, 4, 0.37);
        const Matrix s = gaussian_smooth(c, 0.5);
        for (double v : s.flat()) {
            CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
        }
    }
    SUBCASE("1x1 map") {
        const Matrix one(1, 1, 2.5);
        CHECK(gaussian_smooth(one, 0.5)(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
    }
    SUBCASE("central impulse on 5x5 spreads the kernel") {
        Matrix impulse(5, 5);
        impulse(2, 2) = 1.0;
        const Matrix s = gaussian_smooth(impulse, 0.5);
        CHECK(s(2, 2) == doctest::Approx(0.619347030557177290235).epsilon(1e-14));
        CHECK(s(1, 2) == doctest::Approx(0.0838195058022106043718).epsilon(1e-14));
        CHECK(s(3, 3) == doctest::Approx(0.0113437365584950730694).epsilon(1e-14));
        CHECK(s(0, 0) == 0.0);
    }
    SUBCASE("non-positive sigma") {
        CHECK_THROWS_AS(gaussian_smooth(Matrix(3, 3), 0.0), DomainError);
        CHECK_THROWS_AS(gaussian_smooth(Matrix(3, 3), -1.0), DomainError);
    }
}

TEST_CASE("gaussian_smooth is linear and its transpose is the adjoint") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 1 + trial % 6, w = 1 + (trial * 7) % 5;
        const Matrix x = random_matrix(rng, h, w), y = random_matrix(rng, h, w);
        const double a = 1.7, b = -0.4;
        Matrix combo(h, w);
        for (std::size_t i = 0; i < combo.size(); ++i) {
            combo.flat()[i] = a * x.flat()[i] + b * y.flat()[i];
        }
        const Matrix lhs = gaussian_smooth(combo, 0.5);
        const Matrix sx = gaussian_smooth(x, 0.5), sy = gaussian_smooth(y, 0.5);
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            CHECK(std::abs(lhs.flat()[i] - (a * sx.flat()[i] + b * sy.flat()[i])) <= 1e-6);
        }
        const double forward = frobenius_dot(sx, y);
        const double adjoint = frobenius_dot(x, gaussian_smooth_transpose(y, 0.5));
        CHECK(forward == doctest::Approx(adjoint).epsilon(1e-12));
    }
}

TEST_CASE("multi-head attention gradients match central differences") {
    std::mt19937_64 rng(11);
    AttentionWeights w;
    w.heads = 2;
    w.query = random_matrix(rng, 4, 6);
    w.key = random_matrix(rng, 3, 6);
    w.value = random_matrix(rng, 3, 4);
    w.out = random_matrix(rng, 4, 4);
    Matrix xq = random_matrix(rng, 5, 4);
    Matrix xkv = random_matrix(rng, 7, 3);
    const Matrix g_out = random_matrix(rng, 5, 4);
    const Matrix g_mean = random_matrix(rng, 5, 7);

    auto objective = [&] {
        const auto r = multi_head_attention(xq, xkv, w);
        return frobenius_dot(r.output, g_out) + frobenius_dot(r.mean_weights, g_mean);
    };
    const auto fwd = multi_head_attention(xq, xkv, w);
    const auto grads = multi_head_attention_vjp(xq, xkv, w, fwd.trace, g_out, g_mean);

    const double eps = 1e-6;
    auto check_fd = [&](Matrix& input, const Matrix& analytic) {
        for (std::size_t i = 0; i < input.size(); ++i) {
            const double saved = input.flat()[i];
            input.flat()[i] = saved + eps;
            const double up = objective();
            input.flat()[i] = saved - eps;
            const double down = objective();
            input.flat()[i] = saved;
            CHECK(analytic.flat()[i] == doctest::Approx((up - down) / (2 * eps)).epsilon(1e-6));
        }
    };
    check_fd(xq, grads.d_query_input);
    check_fd(xkv, grads.d_kv_input);
}

TEST_CASE("map types check their invariants") {
    const Matrix probs = Matrix::from_rows({{0.25, 0.75}, {0.5, 0.5}, {1.0, 0.0}, {0.1, 0.9}});
    const CrossAttnMap cross(probs, 2, 2);
    CHECK(cross.satisfies_invariants());
    CHECK(cross.token_map(1)(1, 1) == 0.9);
    CHECK_THROWS_AS(CrossAttnMap(probs, 3, 2), ShapeError);
    CHECK_FALSE(CrossAttnMap(Matrix::from_rows({{0.5, 0.6}}), 1, 1).satisfies_invariants());

    const SelfAttnMap self(Matrix::from_rows({{0.5, 0.5}, {0.2, 0.8}}), {1, 3}, 2, 2);
    CHECK(self.satisfies_invariants());
    CHECK(self.row_of(3) == 1u);
    CHECK_FALSE(self.row_of(0).has_value());
    const Matrix grid = self.position_map(3);
    CHECK(grid(0, 0) == 0.0);
    CHECK(grid(0, 1) == 0.2);
    CHECK(grid(1, 1) == 0.8);
    CHECK_THROWS_AS(self.position_map(2), DomainError);
    CHECK_THROWS_AS(SelfAttnMap(Matrix(2, 2), {3, 1}, 2, 2), DomainError);
}

TEST_CASE("TokenMatrix invariants") {
    CHECK_THROWS_AS(TokenMatrix(Matrix(6, 2), 2, 2), ShapeError);
    CHECK_THROWS_AS(TokenMatrix(Matrix(0, 2), 0, 0), ShapeError);
    Matrix bad(1, 1);
    bad(0, 0) = INFINITY;
    CHECK_THROWS_AS(TokenMatrix(bad, 1, 1), DomainError);
}
