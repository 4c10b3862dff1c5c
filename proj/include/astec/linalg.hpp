// Copyright 2026 The astec-xmc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "astec/error.hpp"

namespace astec {

/// Row-major dense matrix of doubles.
class DenseMatrix {
  public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    DenseMatrix& operator*=(double s) noexcept {
        for (auto& v : data_) v *= s;
        return *this;
    }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Scale to unit l2 norm in place; returns the original norm (zero vectors are left alone).
inline double normalize(std::span<double> a) noexcept {
    const double n = norm2(a);
    if (n > 0)
        for (auto& v : a) v /= n;
    return n;
}

/// Cosine similarity; 0 when either side is the zero vector.
inline double cosine(std::span<const double> a, std::span<const double> b) noexcept {
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

/// y = M x
inline std::vector<double> matvec(const DenseMatrix& m, std::span<const double> x) {
    if (x.size() != m.cols()) throw Error(ErrorCode::ShapeMismatch, "matvec");
    std::vector<double> y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    return y;
}

/// y = M^T x
inline std::vector<double> matvec_t(const DenseMatrix& m, std::span<const double> x) {
    if (x.size() != m.rows()) throw Error(ErrorCode::ShapeMismatch, "matvec_t");
    std::vector<double> y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) axpy(x[r], m.row(r), y);
    return y;
}

inline double frobenius_distance(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "frobenius_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace astec
