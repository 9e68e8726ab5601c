#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"

namespace fedrep {

// Dense row-major double matrix. Deliberately minimal: the project only
// needs batched affine maps, row dot products and elementwise updates.
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
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) {
  return std::sqrt(dot(a, a));
}

// C = A * B^T, the workhorse shape for row-vector batches against
// (out x in) weight blocks and for similarity matrices.
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ConfigError("matmul_bt: inner dimensions disagree (" +
                      std::to_string(a.cols()) + " vs " +
                      std::to_string(b.cols()) + ")");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

// C = A * B.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ConfigError("matmul: inner dimensions disagree (" +
                      std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()) + ")");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

// C = A^T * B.
inline Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw ConfigError("matmul_at: row counts disagree (" +
                      std::to_string(a.rows()) + " vs " +
                      std::to_string(b.rows()) + ")");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
  return c;
}

inline void add_scaled(Matrix& dst, const Matrix& src, double scale) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols())
    throw ConfigError("add_scaled: shape mismatch");
  for (std::size_t i = 0; i < dst.data().size(); ++i)
    dst.data()[i] += scale * src.data()[i];
}

inline Matrix gather_rows(const Matrix& src, const std::vector<int>& idx) {
  Matrix out(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = static_cast<std::size_t>(idx[i]);
    for (std::size_t j = 0; j < src.cols(); ++j) out(i, j) = src(r, j);
  }
  return out;
}

inline bool rows_unit_norm(const Matrix& m, double tol = 1e-9) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    if (std::abs(l2_norm(m.row(i)) - 1.0) > tol) return false;
  return true;
}

}  // namespace fedrep
