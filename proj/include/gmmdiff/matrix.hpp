#pragma once

// Small dense row-major matrix and vector helpers. Dimensions in this project
// stay below ~10^3, so nothing here is blocked or vectorised.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "gmmdiff/error.hpp"

namespace gmmdiff {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw Error(ErrorCode::InvalidMatrix, "ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(i < rows_ && j < cols_);
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  Vector column(std::size_t j) const {
    Vector c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double trace() const {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) s += (*this)(i, i);
    return s;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.rows());
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
  assert(a.cols() == x.size());
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

inline Vector operator*(const Matrix& a, const Vector& x) { return a * std::span<const double>(x); }

inline Matrix operator+(Matrix a, const Matrix& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += b.data()[i];
  return a;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] -= b.data()[i];
  return a;
}

inline Matrix operator*(double s, Matrix a) {
  for (double& v : a.data()) v *= s;
  return a;
}

inline Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline Vector operator+(Vector a, const Vector& b) {
  assert(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vector operator-(Vector a, const Vector& b) {
  assert(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

inline Vector operator*(double s, Vector a) {
  for (double& v : a) v *= s;
  return a;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs(const Matrix& a) { return max_abs(a.data()); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  return max_abs_diff(a.data(), b.data());
}

/// Square symmetric matrix. Construction averages A and A^T, so
/// `(i, j) == (j, i)` holds bit-for-bit afterwards.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Matrix& m) : m_(m) {
    if (m.rows() != m.cols() || m.rows() == 0)
      throw Error(ErrorCode::InvalidMatrix, "symmetric matrix must be square with dim >= 1");
    const std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double avg = 0.5 * (m(i, j) + m(j, i));
        m_(i, j) = avg;
        m_(j, i) = avg;
      }
  }

  static SymMatrix identity(std::size_t n) { return SymMatrix(Matrix::identity(n)); }
  static SymMatrix diagonal(std::span<const double> d) { return SymMatrix(Matrix::diagonal(d)); }

  std::size_t dim() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& matrix() const noexcept { return m_; }
  double trace() const { return m_.trace(); }

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  Matrix m_;
};

}  // namespace gmmdiff
