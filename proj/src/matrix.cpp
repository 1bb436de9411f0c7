// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/matrix.hpp"

#include <cmath>
#include <string>

#include "optiprune/error.hpp"

namespace optiprune {

namespace {

std::string dims(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match rows*cols = " + std::to_string(rows_ * cols_));
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) {
        return {};
    }
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) {
            throw ShapeError("Matrix::from_rows: row " + std::to_string(r) + " has " +
                             std::to_string(rows[r].size()) + " columns, expected " +
                             std::to_string(m.cols()));
        }
        for (std::size_t c = 0; c < m.cols(); ++c) {
            m(r, c) = rows[r][c];
        }
    }
    return m;
}

bool Matrix::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ (" + dims(a) + " @ " + dims(b) + ")");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double s = a(i, k);
            const auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                dst[j] += s * src[j];
            }
        }
    }
    return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_transposed: column counts differ (" + dims(a) + " vs " + dims(b) +
                         ")");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ra = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto rb = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += ra[k] * rb[k];
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix transposed_matmul(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("transposed_matmul: row counts differ (" + dims(a) + " vs " + dims(b) +
                         ")");
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const auto rb = b.row(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double s = a(k, i);
            auto dst = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                dst[j] += s * rb[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out(c, r) = m(r, c);
        }
    }
    return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(indices[i]) +
                             " out of range for " + std::to_string(m.rows()) + " rows");
        }
        const auto src = m.row(indices[i]);
        auto dst = out.row(i);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            dst[c] = src[c];
        }
    }
    return out;
}

Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count) {
    if (begin + count > m.cols()) {
        throw ShapeError("column_block: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceed width " +
                         std::to_string(m.cols()));
    }
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            out(r, c) = m(r, begin + c);
        }
    }
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("add_inplace: shapes differ (" + dims(a) + " vs " + dims(b) + ")");
    }
    auto dst = a.flat();
    const auto src = b.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

TokenMatrix::TokenMatrix(Matrix data, std::size_t height, std::size_t width)
    : data_(std::move(data)), height_(height), width_(width) {
    if (data_.rows() == 0 || data_.cols() == 0) {
        throw ShapeError("TokenMatrix: needs at least one token and one channel, got " +
                         dims(data_));
    }
    if (height_ * width_ != data_.rows()) {
        throw ShapeError("TokenMatrix: N = " + std::to_string(data_.rows()) +
                         " tokens but grid is " + std::to_string(height_) + "x" +
                         std::to_string(width_));
    }
    if (!data_.all_finite()) {
        throw DomainError("TokenMatrix: non-finite entry");
    }
}

}  // namespace optiprune
