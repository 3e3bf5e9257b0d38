#pragma once

// Dense row-major matrices and the handful of primitives every kernel level
// and the reference paths share: dot, axpy, matmul against a transposed
// operand, row gathering, and the exact (erf-based) GeLU.
//
// Every reduction over the inner dimension accumulates strictly left to right
// starting from zero. Tiled routines keep several independent accumulators but
// never reassociate a single sum, so a tiled result is bitwise equal to the
// scalar `dot` of the same operands.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fff/errors.hpp"

namespace fff {

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows_, cols_));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<T>> rows) : rows_(rows.size()) {
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("ragged initializer for Matrix");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::string shape() const { return shape_string(rows_, cols_); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// Same shape and same object representation, element for element. Unlike
// operator== this treats identical NaNs as equal and +0 / -0 as different.
template <typename T>
bool bitwise_equal(const Matrix<T>& a, const Matrix<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0);
}

template <typename T>
bool bitwise_equal(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

// Left-to-right inner product.
template <typename T>
T dot(std::span<const T> a, std::span<const T> b) noexcept {
  T acc{};
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// y += alpha * x
template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) noexcept {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T gelu(T x) noexcept {
  return x * T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

namespace detail {

inline constexpr std::size_t kTileRows = 8;  // rows of `a` processed together
inline constexpr std::size_t kTileCols = 4;  // rows of `b_t` processed together

// out[out_begin + i][j] = dot(a.row(row_begin + i), b_t.row(j)) for i < row_count.
// `a` rows are packed column-interleaved so the innermost loop runs over
// independent accumulators and vectorizes without touching summation order.
template <typename T>
void gemm_nt_rows(const Matrix<T>& a, std::size_t row_begin, std::size_t row_count,
                  const Matrix<T>& b_t, Matrix<T>& out, std::size_t out_begin, std::vector<T>& pack) {
  const std::size_t inner = a.cols();
  const std::size_t n = b_t.rows();
  std::size_t r = 0;
  for (; r + kTileRows <= row_count; r += kTileRows) {
    pack.resize(inner * kTileRows);
    for (std::size_t i = 0; i < kTileRows; ++i) {
      const auto src = a.row(row_begin + r + i);
      for (std::size_t h = 0; h < inner; ++h) pack[h * kTileRows + i] = src[h];
    }
    std::size_t j = 0;
    for (; j + kTileCols <= n; j += kTileCols) {
      std::array<std::array<T, kTileRows>, kTileCols> acc{};
      const T* w[kTileCols];
      for (std::size_t c = 0; c < kTileCols; ++c) w[c] = b_t.row(j + c).data();
      for (std::size_t h = 0; h < inner; ++h) {
        const T* xh = pack.data() + h * kTileRows;
        for (std::size_t c = 0; c < kTileCols; ++c) {
          const T wv = w[c][h];
          for (std::size_t i = 0; i < kTileRows; ++i) acc[c][i] += xh[i] * wv;
        }
      }
      for (std::size_t c = 0; c < kTileCols; ++c)
        for (std::size_t i = 0; i < kTileRows; ++i) out(out_begin + r + i, j + c) = acc[c][i];
    }
    for (; j < n; ++j)
      for (std::size_t i = 0; i < kTileRows; ++i)
        out(out_begin + r + i, j) = dot<T>(a.row(row_begin + r + i), b_t.row(j));
  }
  for (; r < row_count; ++r)
    for (std::size_t j = 0; j < n; ++j) out(out_begin + r, j) = dot<T>(a.row(row_begin + r), b_t.row(j));
}

}  // namespace detail

// result[i][j] = dot(a.row(i), b_t.row(j)); `b_t` holds the right operand transposed.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b_t) {
  if (a.cols() != b_t.cols()) {
    throw DimensionError("matmul: inner dimensions differ, a is " + a.shape() + ", b_transposed is " +
                         b_t.shape());
  }
  Matrix<T> out(a.rows(), b_t.rows());
  std::vector<T> pack;
  detail::gemm_nt_rows(a, 0, a.rows(), b_t, out, 0, pack);
  return out;
}

template <typename T, typename Index>
void gather_rows_into(const Matrix<T>& m, std::span<const Index> indices, Matrix<T>& out) {
  static_assert(std::is_integral_v<Index>);
  if (out.rows() != indices.size() || out.cols() != m.cols()) out = Matrix<T>(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    bool negative = false;
    if constexpr (std::is_signed_v<Index>) negative = idx < 0;
    if (negative || static_cast<std::size_t>(idx) >= m.rows()) {
      throw BoundsError("gather_rows: index " + std::to_string(idx) + " at position " + std::to_string(i) +
                        " is out of range for " + std::to_string(m.rows()) + " rows");
    }
    const auto src = m.row(static_cast<std::size_t>(idx));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
}

template <typename T, typename Index>
Matrix<T> gather_rows(const Matrix<T>& m, std::span<const Index> indices) {
  Matrix<T> out(indices.size(), m.cols());
  gather_rows_into(m, indices, out);
  return out;
}

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& m, const std::vector<std::size_t>& indices) {
  return gather_rows(m, std::span<const std::size_t>(indices));
}

}  // namespace fff
