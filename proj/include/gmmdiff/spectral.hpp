#pragma once

// Dense symmetric eigensolver (cyclic Jacobi) and the spectral functions
// built on it: f(A) = U diag(f(lambda)) U^T, log-determinant, square root.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>

#include "gmmdiff/matrix.hpp"

namespace gmmdiff {

/// Eigen-pairs of a symmetric matrix. Columns of `vectors` are orthonormal
/// eigenvectors; `values` are sorted descending.
struct Spectrum {
  Matrix vectors;
  Vector values;

  std::size_t dim() const noexcept { return values.size(); }
  double min_value() const { return values.back(); }
  double max_value() const { return values.front(); }
};

struct JacobiOptions {
  double relative_tolerance = 1e-12;
  int max_sweeps = 100;
};

namespace detail {

inline double off_diagonal_frobenius(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

inline double frobenius(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

// Applies the rotation zeroing a(p, q) to both a (two-sided) and v (columns).
inline void jacobi_rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();

  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;

  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace detail

/// Cyclic Jacobi eigendecomposition. Sweeps until the off-diagonal Frobenius
/// norm drops below `relative_tolerance * ||A||_F` (or `max_sweeps` is hit).
/// Each eigenvector is signed so its first nonzero component is positive.
inline Spectrum eigendecompose(const SymMatrix& input, JacobiOptions opts = {}) {
  const Matrix& src = input.matrix();
  if (!src.all_finite()) throw Error(ErrorCode::InvalidMatrix, "non-finite entry");

  const std::size_t n = input.dim();
  Matrix a = src;
  Matrix v = Matrix::identity(n);
  const double threshold = opts.relative_tolerance * detail::frobenius(a);

  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    if (detail::off_diagonal_frobenius(a) <= threshold) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) detail::jacobi_rotate(a, v, p, q);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  Spectrum out{Matrix(n, n), Vector(n)};
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src_col = order[c];
    out.values[c] = a(src_col, src_col);
    double sign = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (v(k, src_col) != 0.0) {
        sign = v(k, src_col) > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, c) = sign * v(k, src_col);
  }
  return out;
}

/// U diag(f(lambda_i)) U^T. Throws SingularMatrix if f is non-finite at any
/// eigenvalue (e.g. 1/lambda at lambda = 0).
template <typename F>
SymMatrix spd_apply_spectral(const Spectrum& s, F&& f) {
  const std::size_t n = s.dim();
  Vector fv(n);
  for (std::size_t i = 0; i < n; ++i) {
    fv[i] = f(s.values[i]);
    if (!std::isfinite(fv[i]))
      throw Error(ErrorCode::SingularMatrix,
                  "spectral function non-finite at eigenvalue " + std::to_string(s.values[i]));
  }
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += s.vectors(i, k) * fv[k] * s.vectors(j, k);
      m(i, j) = acc;
      m(j, i) = acc;
    }
  return SymMatrix(m);
}

/// U diag(f(lambda_i)) U^T x without forming the matrix.
template <typename F>
Vector spd_apply_spectral(const Spectrum& s, F&& f, std::span<const double> x) {
  const std::size_t n = s.dim();
  Vector coeff(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double fk = f(s.values[k]);
    if (!std::isfinite(fk))
      throw Error(ErrorCode::SingularMatrix,
                  "spectral function non-finite at eigenvalue " + std::to_string(s.values[k]));
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) proj += s.vectors(i, k) * x[i];
    coeff[k] = fk * proj;
  }
  Vector y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) y[i] += s.vectors(i, k) * coeff[k];
  return y;
}

inline double log_det(const Spectrum& s) {
  double acc = 0.0;
  for (double lambda : s.values) {
    if (!(lambda > 0.0))
      throw Error(ErrorCode::NotPositiveDefinite, "eigenvalue " + std::to_string(lambda) + " <= 0");
    acc += std::log(lambda);
  }
  return acc;
}

/// Eigenvalues in [-floor, 0) are treated as 0; anything more negative is an error.
inline double clamp_psd_eigenvalue(double lambda, double floor = 1e-10) {
  if (lambda < -floor)
    throw Error(ErrorCode::NotPositiveDefinite, "eigenvalue " + std::to_string(lambda) + " < 0");
  return std::max(lambda, 0.0);
}

inline SymMatrix psd_sqrt(const Spectrum& s) {
  return spd_apply_spectral(s, [](double l) { return std::sqrt(clamp_psd_eigenvalue(l)); });
}

}  // namespace gmmdiff
