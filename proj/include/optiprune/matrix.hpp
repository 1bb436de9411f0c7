// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace optiprune {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    /// Build from nested rows; all rows must have equal length.
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// A @ B with a fixed i-k-j accumulation order.
Matrix matmul(const Matrix& a, const Matrix& b);

/// A @ B^T.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

/// A^T @ B.
Matrix transposed_matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Rows of `m` at `indices`, in that order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

/// Columns [begin, begin + count).
Matrix column_block(const Matrix& m, std::size_t begin, std::size_t count);

/// In-place a += b; shapes must match.
void add_inplace(Matrix& a, const Matrix& b);

/// N x C image-token features laid out over an H x W grid (row-major, N = H * W).
class TokenMatrix {
public:
    TokenMatrix(Matrix data, std::size_t height, std::size_t width);

    const Matrix& data() const noexcept { return data_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t tokens() const noexcept { return data_.rows(); }
    std::size_t channels() const noexcept { return data_.cols(); }

private:
    Matrix data_;
    std::size_t height_;
    std::size_t width_;
};

}  // namespace optiprune
