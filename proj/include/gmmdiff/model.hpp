#pragma once

// Ground-truth Gaussian mixture (identity component covariances), labelled
// dataset sampling, per-class empirical statistics and the OU forward
// schedule r_t = e^{-t}, sigma_t = sqrt(1 - e^{-2t}).

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gmmdiff/error.hpp"
#include "gmmdiff/matrix.hpp"
#include "gmmdiff/rng.hpp"
#include "gmmdiff/spectral.hpp"

namespace gmmdiff {

class MixtureModel {
 public:
  MixtureModel(Vector weights, std::vector<Vector> means)
      : weights_(std::move(weights)), means_(std::move(means)) {
    if (weights_.empty() || weights_.size() != means_.size())
      throw Error(ErrorCode::InvalidModel, "need one weight per component and at least one component");
    dim_ = means_.front().size();
    if (dim_ == 0) throw Error(ErrorCode::InvalidModel, "dimension must be positive");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w > 0.0) || !std::isfinite(w))
        throw Error(ErrorCode::InvalidModel, "weights must be positive and finite");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw Error(ErrorCode::InvalidModel, "weights must sum to 1, got " + std::to_string(total));
    for (const auto& m : means_) {
      if (m.size() != dim_) throw Error(ErrorCode::InvalidModel, "means disagree on dimension");
      for (double v : m)
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidModel, "non-finite mean entry");
    }
  }

  /// Single-component model N(mean, I).
  static MixtureModel single(Vector mean) { return MixtureModel({1.0}, {std::move(mean)}); }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t classes() const noexcept { return weights_.size(); }
  const Vector& weights() const noexcept { return weights_; }
  const std::vector<Vector>& means() const noexcept { return means_; }
  /// Labels are 1-based.
  const Vector& mean_of(int label) const { return means_.at(static_cast<std::size_t>(label - 1)); }

 private:
  Vector weights_;
  std::vector<Vector> means_;
  std::size_t dim_ = 0;
};

struct LabeledDataset {
  std::size_t dim = 0;
  std::vector<Vector> points;
  std::vector<int> labels;  // 1-based

  std::size_t size() const noexcept { return points.size(); }

  std::vector<Vector> points_of(int label) const {
    std::vector<Vector> out;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (labels[i] == label) out.push_back(points[i]);
    return out;
  }
};

inline LabeledDataset sample_mixture(const MixtureModel& model, std::size_t n, Rng& rng) {
  if (n == 0) throw Error(ErrorCode::InvalidModel, "sample count must be >= 1");
  LabeledDataset data;
  data.dim = model.dim();
  data.points.reserve(n);
  data.labels.reserve(n);
  const auto& w = model.weights();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = 0;
    double cumulative = w[0];
    while (u >= cumulative && k + 1 < w.size()) cumulative += w[++k];
    const Vector& mu = model.means()[k];
    Vector x(model.dim());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = mu[j] + rng.normal();
    data.points.push_back(std::move(x));
    data.labels.push_back(static_cast<int>(k) + 1);
  }
  return data;
}

/// n i.i.d. draws from N(mean, I).
inline std::vector<Vector> sample_gaussian(std::span<const double> mean, std::size_t n, Rng& rng) {
  std::vector<Vector> pts(n, Vector(mean.size()));
  for (auto& x : pts)
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = mean[j] + rng.normal();
  return pts;
}

/// Per-class empirical moments with the biased 1/n_k covariance
/// Sigma = (1/n) sum x x^T - mu_hat mu_hat^T, evaluated in centred form.
struct ClassStats {
  int label = 1;
  std::size_t count = 0;
  Vector mean;
  SymMatrix cov;
  Spectrum spectrum;
  double mean_norm_sq = 0.0;

  std::size_t dim() const noexcept { return mean.size(); }
};

/// `ridge` adds ridge * I to the covariance (0 reproduces the plain estimator).
inline ClassStats class_stats(std::span<const Vector> points, int label = 1, double ridge = 0.0) {
  if (points.empty())
    throw Error(ErrorCode::EmptyClass, "class " + std::to_string(label) + " has no samples");
  const std::size_t d = points.front().size();
  const double n = static_cast<double>(points.size());

  Vector mean(d, 0.0);
  for (const auto& x : points)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
  for (double& m : mean) m /= n;

  Matrix cov(d, d);
  Vector centred(d);
  for (const auto& x : points) {
    for (std::size_t j = 0; j < d; ++j) centred[j] = x[j] - mean[j];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) cov(i, j) += centred[i] * centred[j];
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) /= n;
      cov(j, i) = cov(i, j);
    }
    cov(i, i) += ridge;
  }

  ClassStats s;
  s.label = label;
  s.count = points.size();
  s.mean = std::move(mean);
  s.cov = SymMatrix(cov);
  s.spectrum = eigendecompose(s.cov);
  for (double& l : s.spectrum.values) l = clamp_psd_eigenvalue(l);
  s.mean_norm_sq = squared_norm(s.mean);
  return s;
}

inline ClassStats class_stats(const LabeledDataset& data, int label, double ridge = 0.0) {
  const auto pts = data.points_of(label);
  return class_stats(std::span<const Vector>(pts), label, ridge);
}

/// Stats from explicit moments; used for synthetic instances in tests and
/// analytic sweeps.
inline ClassStats make_stats(Vector mean, const SymMatrix& cov, std::size_t count = 0, int label = 1) {
  ClassStats s;
  s.label = label;
  s.count = count;
  s.mean = std::move(mean);
  s.cov = cov;
  s.spectrum = eigendecompose(cov);
  for (double& l : s.spectrum.values) l = clamp_psd_eigenvalue(l);
  s.mean_norm_sq = squared_norm(s.mean);
  return s;
}

inline ClassStats require_full_rank(const ClassStats& stats, double tol) {
  const double lmin = stats.spectrum.min_value();
  if (lmin < tol) throw RankDeficientError(lmin, tol);
  return stats;
}

struct Schedule {
  double t = 0.0;
  double r = 1.0;
  double sigma = 0.0;
};

inline Schedule schedule_at(double t) {
  if (!std::isfinite(t) || t < 0.0)
    throw Error(ErrorCode::InvalidTime, "time must be finite and >= 0, got " + std::to_string(t));
  return {t, std::exp(-t), std::sqrt(-std::expm1(-2.0 * t))};
}

/// x_t = r_t x + sigma_t eps, eps ~ N(0, I). Returns x unchanged at t = 0.
inline Vector forward_sample(std::span<const double> x, double t, Rng& rng) {
  const Schedule s = schedule_at(t);
  Vector out(x.begin(), x.end());
  if (t == 0.0) return out;
  for (double& v : out) v = s.r * v + s.sigma * rng.normal();
  return out;
}

}  // namespace gmmdiff
