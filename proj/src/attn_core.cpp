// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/attn_core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "optiprune/error.hpp"

namespace optiprune {

namespace {

std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
    if (i < 0) {
        return 0;
    }
    return std::min(static_cast<std::size_t>(i), n - 1);
}

void check_kernel_args(double sigma, std::size_t size) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw DomainError("gaussian kernel: sigma must be positive, got " + std::to_string(sigma));
    }
    if (size == 0 || size % 2 == 0) {
        throw DomainError("gaussian kernel: size must be odd and positive, got " +
                          std::to_string(size));
    }
}

}  // namespace

void softmax_rows(Matrix& logits) {
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        double max_v = row[0];
        for (std::size_t c = 1; c < row.size(); ++c) {
            max_v = std::max(max_v, row[c]);
        }
        double sum = 0.0;
        for (auto& v : row) {
            v = std::exp(v - max_v);
            sum += v;
        }
        for (auto& v : row) {
            v /= sum;
        }
    }
}

Matrix softmax_rows_vjp(const Matrix& probs, const Matrix& d_probs) {
    Matrix out(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto p = probs.row(r);
        const auto g = d_probs.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            dot += p[c] * g[c];
        }
        auto dst = out.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) {
            dst[c] = p[c] * (g[c] - dot);
        }
    }
    return out;
}

AttentionResult softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                  std::optional<double> scale) {
    if (q.cols() == 0) {
        throw ShapeError("softmax_attention: head dimension d must be >= 1");
    }
    if (q.cols() != k.cols()) {
        throw ShapeError("softmax_attention: Q has d=" + std::to_string(q.cols()) +
                         " columns but K has d=" + std::to_string(k.cols()));
    }
    if (k.rows() != v.rows()) {
        throw ShapeError("softmax_attention: K has m=" + std::to_string(k.rows()) +
                         " rows but V has m=" + std::to_string(v.rows()));
    }
    if (k.rows() == 0) {
        throw ShapeError("softmax_attention: K has m=0 rows");
    }
    if (!q.all_finite() || !k.all_finite() || !v.all_finite()) {
        throw DomainError("softmax_attention: non-finite input");
    }
    const double s = scale.value_or(1.0 / std::sqrt(static_cast<double>(q.cols())));

    Matrix weights = matmul_transposed(q, k);
    for (auto& x : weights.flat()) {
        x *= s;
    }
    softmax_rows(weights);
    Matrix output = matmul(weights, v);
    return {std::move(output), std::move(weights)};
}

Matrix cosine_similarity_matrix(const Matrix& t) {
    const std::size_t n = t.rows();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (double x : t.row(i)) {
            acc += x * x;
        }
        norms[i] = std::sqrt(acc);
        if (!(norms[i] > 0.0)) {
            throw DomainError("cosine_similarity_matrix: row " + std::to_string(i) +
                              " has zero norm");
        }
    }
    Matrix sim(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ri = t.row(i);
        for (std::size_t j = i; j < n; ++j) {
            const auto rj = t.row(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < ri.size(); ++c) {
                dot += ri[c] * rj[c];
            }
            const double v = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
            sim(i, j) = v;
            sim(j, i) = v;
        }
    }
    return sim;
}

Matrix cosine_similarity_matrix(const TokenMatrix& t) { return cosine_similarity_matrix(t.data()); }

Matrix gaussian_kernel(double sigma, std::size_t size) {
    check_kernel_args(sigma, size);
    const auto r = static_cast<std::ptrdiff_t>(size / 2);
    Matrix k(size, size);
    double total = 0.0;
    for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const double w = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k(dy + r, dx + r) = w;
            total += w;
        }
    }
    for (auto& w : k.flat()) {
        w /= total;
    }
    return k;
}

Matrix gaussian_smooth(const Matrix& map, double sigma, std::size_t kernel_size) {
    const Matrix k = gaussian_kernel(sigma, kernel_size);
    if (map.rows() == 0 || map.cols() == 0) {
        throw ShapeError("gaussian_smooth: map must be at least 1x1");
    }
    const std::size_t h = map.rows();
    const std::size_t w = map.cols();
    const auto r = static_cast<std::ptrdiff_t>(kernel_size / 2);
    Matrix out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
                const std::size_t sy = clamp_index(static_cast<std::ptrdiff_t>(y) + dy, h);
                for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                    const std::size_t sx = clamp_index(static_cast<std::ptrdiff_t>(x) + dx, w);
                    acc += k(dy + r, dx + r) * map(sy, sx);
                }
            }
            out(y, x) = acc;
        }
    }
    return out;
}

Matrix gaussian_smooth_transpose(const Matrix& grad, double sigma, std::size_t kernel_size) {
    const Matrix k = gaussian_kernel(sigma, kernel_size);
    const std::size_t h = grad.rows();
    const std::size_t w = grad.cols();
    const auto r = static_cast<std::ptrdiff_t>(kernel_size / 2);
    Matrix out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double g = grad(y, x);
            if (g == 0.0) {
                continue;
            }
            for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
                const std::size_t sy = clamp_index(static_cast<std::ptrdiff_t>(y) + dy, h);
                for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                    const std::size_t sx = clamp_index(static_cast<std::ptrdiff_t>(x) + dx, w);
                    out(sy, sx) += k(dy + r, dx + r) * g;
                }
            }
        }
    }
    return out;
}

MultiHeadResult multi_head_attention(const Matrix& x_query, const Matrix& x_kv,
                                     const AttentionWeights& w) {
    if (w.heads == 0 || w.query.cols() % w.heads != 0 || w.value.cols() % w.heads != 0) {
        throw ShapeError("multi_head_attention: projection widths not divisible by heads=" +
                         std::to_string(w.heads));
    }
    if (x_query.cols() != w.query.rows()) {
        throw ShapeError("multi_head_attention: query input has " + std::to_string(x_query.cols()) +
                         " channels, projection expects " + std::to_string(w.query.rows()));
    }
    if (x_kv.cols() != w.key.rows() || x_kv.cols() != w.value.rows()) {
        throw ShapeError("multi_head_attention: key/value input has " +
                         std::to_string(x_kv.cols()) + " channels, projections expect " +
                         std::to_string(w.key.rows()));
    }
    const std::size_t dk = w.head_dim();
    const std::size_t dv = w.value_head_dim();
    const Matrix q_all = matmul(x_query, w.query);
    const Matrix k_all = matmul(x_kv, w.key);
    const Matrix v_all = matmul(x_kv, w.value);

    MultiHeadResult res;
    res.trace.concat = Matrix(x_query.rows(), w.value.cols());
    res.mean_weights = Matrix(x_query.rows(), x_kv.rows());
    for (std::size_t h = 0; h < w.heads; ++h) {
        Matrix qh = column_block(q_all, h * dk, dk);
        Matrix kh = column_block(k_all, h * dk, dk);
        Matrix vh = column_block(v_all, h * dv, dv);
        AttentionResult a = softmax_attention(qh, kh, vh);
        for (std::size_t r = 0; r < a.output.rows(); ++r) {
            for (std::size_t c = 0; c < dv; ++c) {
                res.trace.concat(r, h * dv + c) = a.output(r, c);
            }
        }
        add_inplace(res.mean_weights, a.weights);
        res.trace.queries.push_back(std::move(qh));
        res.trace.keys.push_back(std::move(kh));
        res.trace.values.push_back(std::move(vh));
        res.trace.weights.push_back(std::move(a.weights));
    }
    const double inv_heads = 1.0 / static_cast<double>(w.heads);
    for (auto& x : res.mean_weights.flat()) {
        x *= inv_heads;
    }
    res.output = matmul(res.trace.concat, w.out);
    return res;
}

MultiHeadInputGrads multi_head_attention_vjp(const Matrix& x_query, const Matrix& x_kv,
                                             const AttentionWeights& w,
                                             const MultiHeadTrace& trace,
                                             const Matrix& d_output,
                                             const Matrix& d_mean_weights) {
    const std::size_t n = x_query.rows();
    const std::size_t m = x_kv.rows();
    const std::size_t dk = w.head_dim();
    const std::size_t dv = w.value_head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const double inv_heads = 1.0 / static_cast<double>(w.heads);

    const Matrix d_concat = d_output.empty() ? Matrix(n, w.value.cols())
                                             : matmul_transposed(d_output, w.out);

    MultiHeadInputGrads g{Matrix(n, x_query.cols()), Matrix(m, x_kv.cols())};
    for (std::size_t h = 0; h < w.heads; ++h) {
        const Matrix& probs = trace.weights[h];
        const Matrix d_out_h = column_block(d_concat, h * dv, dv);

        Matrix d_probs = matmul_transposed(d_out_h, trace.values[h]);
        if (!d_mean_weights.empty()) {
            for (std::size_t i = 0; i < d_probs.size(); ++i) {
                d_probs.flat()[i] += d_mean_weights.flat()[i] * inv_heads;
            }
        }
        const Matrix d_v = transposed_matmul(probs, d_out_h);

        Matrix d_logits = softmax_rows_vjp(probs, d_probs);
        for (auto& x : d_logits.flat()) {
            x *= scale;
        }
        const Matrix d_q = matmul(d_logits, trace.keys[h]);
        const Matrix d_k = transposed_matmul(d_logits, trace.queries[h]);

        add_inplace(g.d_query_input, matmul_transposed(d_q, column_block(w.query, h * dk, dk)));
        add_inplace(g.d_kv_input, matmul_transposed(d_k, column_block(w.key, h * dk, dk)));
        add_inplace(g.d_kv_input, matmul_transposed(d_v, column_block(w.value, h * dv, dv)));
    }
    return g;
}

CrossAttnMap::CrossAttnMap(Matrix probs, std::size_t height, std::size_t width)
    : probs_(std::move(probs)), height_(height), width_(width) {
    if (height_ * width_ != probs_.rows()) {
        throw ShapeError("CrossAttnMap: " + std::to_string(probs_.rows()) +
                         " positions but grid is " + std::to_string(height_) + "x" +
                         std::to_string(width_));
    }
    if (probs_.cols() == 0) {
        throw ShapeError("CrossAttnMap: needs at least one text token");
    }
}

Matrix CrossAttnMap::token_map(std::size_t token) const {
    if (token >= text_tokens()) {
        throw DomainError("CrossAttnMap: token " + std::to_string(token) + " out of range for M=" +
                          std::to_string(text_tokens()));
    }
    Matrix m(height_, width_);
    for (std::size_t p = 0; p < positions(); ++p) {
        m.flat()[p] = probs_(p, token);
    }
    return m;
}

bool CrossAttnMap::satisfies_invariants(double tol) const {
    for (std::size_t p = 0; p < positions(); ++p) {
        double sum = 0.0;
        for (double v : probs_.row(p)) {
            if (!(v >= -tol && v <= 1.0 + tol)) {
                return false;
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) {
            return false;
        }
    }
    return true;
}

SelfAttnMap::SelfAttnMap(Matrix probs, std::vector<std::size_t> positions, std::size_t height,
                         std::size_t width)
    : probs_(std::move(probs)),
      positions_(std::move(positions)),
      row_lookup_(height * width, -1),
      height_(height),
      width_(width) {
    if (probs_.rows() != positions_.size() || probs_.cols() != positions_.size()) {
        throw ShapeError("SelfAttnMap: probs are " + std::to_string(probs_.rows()) + "x" +
                         std::to_string(probs_.cols()) + " but " +
                         std::to_string(positions_.size()) + " positions were given");
    }
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        if (positions_[i] >= row_lookup_.size() || (i > 0 && positions_[i] <= positions_[i - 1])) {
            throw DomainError("SelfAttnMap: positions must be ascending grid indices");
        }
        row_lookup_[positions_[i]] = static_cast<std::ptrdiff_t>(i);
    }
}

SelfAttnMap SelfAttnMap::dense(Matrix probs, std::size_t height, std::size_t width) {
    std::vector<std::size_t> all(height * width);
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    return SelfAttnMap(std::move(probs), std::move(all), height, width);
}

std::optional<std::size_t> SelfAttnMap::row_of(std::size_t position) const {
    if (position >= row_lookup_.size() || row_lookup_[position] < 0) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(row_lookup_[position]);
}

Matrix SelfAttnMap::position_map(std::size_t position) const {
    const auto row = row_of(position);
    if (!row) {
        throw DomainError("SelfAttnMap: position " + std::to_string(position) +
                          " is not among the kept positions");
    }
    Matrix m(height_, width_);
    const auto src = probs_.row(*row);
    for (std::size_t b = 0; b < positions_.size(); ++b) {
        m.flat()[positions_[b]] = src[b];
    }
    return m;
}

bool SelfAttnMap::satisfies_invariants(double tol) const {
    for (std::size_t r = 0; r < probs_.rows(); ++r) {
        double sum = 0.0;
        for (double v : probs_.row(r)) {
            if (v < -tol) {
                return false;
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) {
            return false;
        }
    }
    return true;
}

}  // namespace optiprune
