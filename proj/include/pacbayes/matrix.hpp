#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pacbayes {

/// Dense row-major matrix of 64-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Left-to-right sequential dot product. The fixed order is relied on for
/// bitwise reproducibility of forward passes.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

/// y = A x
inline void matvec(const Matrix& a, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
}

/// y = A^T x
inline void matvec_transposed(const Matrix& a, std::span<const double> x, std::span<double> y) {
  for (std::size_t c = 0; c < a.cols(); ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) y[c] += row[c] * xr;
  }
}

}  // namespace pacbayes
