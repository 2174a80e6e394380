#pragma once

// Reverse-ODE generation dz = (z + score_{T-t}(z)) dt, z_0 ~ N(0, I), driven by
// the linear score -(sigma^2 I + r^2 S)^{-1}(z - r alpha mu_hat).
//
// Integration is explicit Euler in the eigenbasis of S, where the system
// decouples into d scalar ODEs. finite_t_moments() holds the continuous-time
// solution per eigendirection and is the comparison target for the sampler.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gmmdiff/error.hpp"
#include "gmmdiff/matrix.hpp"
#include "gmmdiff/parallel.hpp"
#include "gmmdiff/rng.hpp"
#include "gmmdiff/score.hpp"
#include "gmmdiff/spectral.hpp"

namespace gmmdiff {

struct IntegrationPlan {
  double horizon = 8.0;
  std::size_t steps = 4000;
  double max_step = 0.01;

  double step() const { return horizon / static_cast<double>(steps); }

  void validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw Error(ErrorCode::InvalidPlan, "horizon must be positive and finite");
    if (steps == 0) throw Error(ErrorCode::InvalidPlan, "steps must be >= 1");
    if (step() > max_step)
      throw Error(ErrorCode::InvalidPlan,
                  "step " + std::to_string(step()) + " exceeds max_step " + std::to_string(max_step));
  }
};

struct GaussianMoments {
  Vector mean;
  SymMatrix cov;

  std::size_t dim() const noexcept { return mean.size(); }
};

/// Samples are generated in shards of this many rows; shard s draws from
/// Rng::child(seed, s), so output is independent of the worker count.
inline constexpr std::size_t kShardSize = 1024;

/// The z_0 ~ N(0, I) draws integrate_reverse() starts from (n x d).
inline Matrix initial_noise(std::size_t dim, std::size_t n, std::uint64_t seed) {
  Matrix z(n, dim);
  const std::size_t shards = (n + kShardSize - 1) / kShardSize;
  for (std::size_t s = 0; s < shards; ++s) {
    Rng rng = Rng::child(seed, s);
    const std::size_t end = std::min(n, (s + 1) * kShardSize);
    for (std::size_t i = s * kShardSize; i < end; ++i)
      for (std::size_t j = 0; j < dim; ++j) z(i, j) = rng.normal();
  }
  return z;
}

/// Euler integration of the reverse ODE for n_samples trajectories; returns
/// an n_samples x d matrix. Step j (0-based) evaluates the score at forward
/// time max(T - j h, kMinTime).
inline Matrix integrate_reverse(const EffectiveScoreSpec& spec, const IntegrationPlan& plan,
                                std::size_t n_samples, std::uint64_t seed, std::size_t threads = 1) {
  plan.validate();
  const std::size_t d = spec.dim();
  const std::size_t N = plan.steps;
  const double h = plan.step();
  const Matrix& U = spec.spectrum.vectors;
  const Vector& lambda = spec.spectrum.values;

  Vector mean_proj(d, 0.0);  // U^T mu_hat
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t i = 0; i < d; ++i) mean_proj[k] += U(i, k) * spec.mu_hat[i];

  // gain(j, k) = 1 / (sigma^2 + r^2 lambda_k) written as 1 + r^2 (lambda_k - 1),
  // target(j, k) = r alpha (U^T mu_hat)_k.
  Matrix gain(N, d);
  Matrix target(N, d);
  for (std::size_t j = 0; j < N; ++j) {
    const double t = std::max(plan.horizon - static_cast<double>(j) * h, kMinTime);
    const double r = std::exp(-t);
    for (std::size_t k = 0; k < d; ++k) {
      gain(j, k) = 1.0 / (1.0 + r * r * (lambda[k] - 1.0));
      target(j, k) = r * spec.alpha * mean_proj[k];
    }
  }

  Matrix out = initial_noise(d, n_samples, seed);
  const std::size_t shards = (n_samples + kShardSize - 1) / kShardSize;
  parallel_for(shards, threads, [&](std::size_t s) {
    Vector y(d);
    const std::size_t end = std::min(n_samples, (s + 1) * kShardSize);
    for (std::size_t row = s * kShardSize; row < end; ++row) {
      auto z = out.row(row);
      for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += U(i, k) * z[i];
        y[k] = acc;
      }
      for (std::size_t j = 0; j < N; ++j) {
        bool finite = true;
        for (std::size_t k = 0; k < d; ++k) {
          y[k] += h * (y[k] - gain(j, k) * (y[k] - target(j, k)));
          finite = finite && std::isfinite(y[k]);
        }
        if (!finite) throw NumericalBlowupError(j);
      }
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += U(i, k) * y[k];
        z[i] = acc;
      }
    }
  });
  return out;
}

namespace detail {
inline void require_positive_spectrum(const Spectrum& s) {
  for (double l : s.values)
    if (!(l > 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "eigenvalue " + std::to_string(l) + " <= 0");
}
}  // namespace detail

/// Continuous-time moments of z_T:
///   e_i = alpha (1 - sqrt(l_i) e^{-T} / sqrt(1 + (l_i - 1) e^{-2T}))
///   v_i = l_i / (1 + (l_i - 1) e^{-2T})
/// with mean = U diag(e) U^T mu_hat and cov = U diag(v) U^T.
inline GaussianMoments finite_t_moments(const EffectiveScoreSpec& spec, double horizon) {
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidTime, "horizon must be > 0");
  detail::require_positive_spectrum(spec.spectrum);
  const double decay = std::exp(-horizon);
  const double decay2 = decay * decay;
  auto e = [&](double l) { return spec.alpha * (1.0 - std::sqrt(l) * decay / std::sqrt(1.0 + (l - 1.0) * decay2)); };
  auto v = [&](double l) { return l / (1.0 + (l - 1.0) * decay2); };
  return {spd_apply_spectral(spec.spectrum, e, spec.mu_hat), spd_apply_spectral(spec.spectrum, v)};
}

/// Exact moments of the discrete Euler recursion used by integrate_reverse()
/// (telescoped products, no h -> 0 limit).
inline GaussianMoments euler_moments(const EffectiveScoreSpec& spec, const IntegrationPlan& plan) {
  plan.validate();
  detail::require_positive_spectrum(spec.spectrum);
  const double h = plan.step();
  auto run = [&](double l, bool want_mean) {
    double m = 0.0;
    double var = 1.0;
    for (std::size_t j = 0; j < plan.steps; ++j) {
      const double t = std::max(plan.horizon - static_cast<double>(j) * h, kMinTime);
      const double r = std::exp(-t);
      const double g = 1.0 / (1.0 + r * r * (l - 1.0));
      const double a = 1.0 + h * (1.0 - g);
      m = a * m + h * g * r * spec.alpha;
      var = a * a * var;
    }
    return want_mean ? m : var;
  };
  return {spd_apply_spectral(spec.spectrum, [&](double l) { return run(l, true); }, spec.mu_hat),
          spd_apply_spectral(spec.spectrum, [&](double l) { return run(l, false); })};
}

inline GaussianMoments limit_moments(const EffectiveScoreSpec& spec) {
  detail::require_positive_spectrum(spec.spectrum);
  return {spec.alpha * spec.mu_hat, spec.S};
}

/// Sample mean and biased (1/n) covariance of the rows of `samples`.
inline GaussianMoments empirical_moments(const Matrix& samples) {
  const std::size_t n = samples.rows();
  const std::size_t d = samples.cols();
  if (n < 2) throw Error(ErrorCode::InsufficientSamples, "need at least 2 samples, got " + std::to_string(n));
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += samples(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  Matrix cov(d, d);
  Vector c(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) c[j] = samples(i, j) - mean[j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(a, b) += c[a] * c[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n);
      cov(b, a) = cov(a, b);
    }
  return {std::move(mean), SymMatrix(cov)};
}

}  // namespace gmmdiff
