#pragma once

// Optimal per-class linear denoisers eps(x_t) = W x_t + b and the scores they
// induce, score = -eps / sigma_t.
//
// Closed forms are evaluated through the eigenbasis of the class covariance:
//   clean:      W = sigma (sigma^2 I + r^2 Sigma)^{-1},  b = -r W mu_hat
//   corrupted:  Sigma -> S = Sigma + c * C,  b = -r/(1+nu^2) W mu_hat
// where nu^2 is the per-coordinate variance of the embedding perturbation and
//   isotropic form:  C = I,              c = nu^2/(1+nu^2) ||mu_hat||^2
//   rank-one form:   C = mu_hat mu_hat^T, c = nu^2/(1+nu^2)
// The rank-one form is what the stationarity conditions of the perturbed loss
// produce. The isotropic form is the default; the two agree when d = 1.
//
// solve_normal_equations() and sgd_train() reach the same minimiser from the
// raw samples without touching any of the closed forms.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmmdiff/error.hpp"
#include "gmmdiff/matrix.hpp"
#include "gmmdiff/model.hpp"
#include "gmmdiff/rng.hpp"
#include "gmmdiff/spectral.hpp"

namespace gmmdiff {

/// Scores divide by sigma_t; below this time the division is refused.
inline constexpr double kMinTime = 1e-6;

enum class PerturbationDistribution { Gaussian, Uniform };
enum class CorruptionForm { Isotropic, RankOne };

/// Embedding perturbation of magnitude gamma. Gaussian mode draws gamma * xi
/// with xi ~ N(0, 1) per coordinate; uniform mode draws U(-gamma/sqrt(d), gamma/sqrt(d)).
struct CorruptionSpec {
  double gamma = 0.0;
  PerturbationDistribution distribution = PerturbationDistribution::Gaussian;
  CorruptionForm form = CorruptionForm::Isotropic;
};

/// Per-coordinate variance nu^2 of the embedding perturbation.
inline double perturbation_variance(const CorruptionSpec& spec, std::size_t dim) {
  if (spec.gamma < 0.0 || !std::isfinite(spec.gamma))
    throw Error(ErrorCode::ConfigError, "corruption magnitude must be finite and >= 0");
  const double g2 = spec.gamma * spec.gamma;
  return spec.distribution == PerturbationDistribution::Gaussian ? g2
                                                                  : g2 / (3.0 * static_cast<double>(dim));
}

inline double draw_perturbation(const CorruptionSpec& spec, std::size_t dim, Rng& rng) {
  if (spec.distribution == PerturbationDistribution::Gaussian) return spec.gamma * rng.normal();
  const double half_width = spec.gamma / std::sqrt(static_cast<double>(dim));
  return rng.uniform(-half_width, half_width);
}

struct LinearDenoiser {
  double t = 0.0;
  Matrix W;
  Vector b;

  Vector apply(std::span<const double> x) const { return W * x + b; }
};

/// Limiting generation law N(alpha * mu_hat, S) together with the linear
/// score family it parameterises.
struct EffectiveScoreSpec {
  double alpha = 1.0;
  SymMatrix S;
  Spectrum spectrum;
  Vector mu_hat;

  std::size_t dim() const noexcept { return mu_hat.size(); }
};

namespace detail {

inline Schedule checked_schedule(double t) {
  const Schedule s = schedule_at(t);
  if (t < kMinTime)
    throw Error(ErrorCode::ScheduleSingular, "t = " + std::to_string(t) + " below t_min");
  return s;
}

inline LinearDenoiser denoiser_from_spectrum(const Spectrum& spectrum, std::span<const double> mu_hat,
                                             double alpha, double t) {
  const Schedule s = schedule_at(t);
  const double sigma2 = s.sigma * s.sigma;
  const double r2 = s.r * s.r;
  LinearDenoiser den;
  den.t = t;
  den.W = spd_apply_spectral(spectrum, [&](double l) { return s.sigma / (sigma2 + r2 * l); }).matrix();
  den.b = (-s.r * alpha) * (den.W * mu_hat);
  return den;
}

// Dense Gaussian elimination with partial pivoting.
inline Vector solve_linear(Matrix a, Vector rhs) {
  const std::size_t n = a.rows();
  const double scale = std::max(max_abs(a), 1.0);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (std::abs(a(pivot, col)) < 1e-13 * scale)
      throw Error(ErrorCode::SingularSystem, "pivot vanished at column " + std::to_string(col));
    if (pivot != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a(col, k), a(pivot, k));
      std::swap(rhs[col], rhs[pivot]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t k = col; k < n; ++k) a(r, k) -= f * a(col, k);
      rhs[r] -= f * rhs[col];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t k = i + 1; k < n; ++k) acc -= a(i, k) * x[k];
    x[i] = acc / a(i, i);
  }
  return x;
}

}  // namespace detail

inline EffectiveScoreSpec effective_spec(const ClassStats& stats, const CorruptionSpec& spec,
                                         double tol = 1e-12) {
  const double nu2 = perturbation_variance(spec, stats.dim());
  EffectiveScoreSpec eff;
  eff.mu_hat = stats.mean;
  if (nu2 == 0.0) {
    eff.alpha = 1.0;
    eff.S = stats.cov;
    eff.spectrum = stats.spectrum;
  } else {
    eff.alpha = 1.0 / (1.0 + nu2);
    const double shrink = nu2 / (1.0 + nu2);
    if (spec.form == CorruptionForm::Isotropic) {
      const double c = shrink * stats.mean_norm_sq;
      eff.S = SymMatrix(stats.cov.matrix() + c * Matrix::identity(stats.dim()));
      eff.spectrum = stats.spectrum;
      for (double& l : eff.spectrum.values) l += c;
    } else {
      eff.S = SymMatrix(stats.cov.matrix() + shrink * outer(stats.mean, stats.mean));
      eff.spectrum = eigendecompose(eff.S);
      for (double& l : eff.spectrum.values) l = clamp_psd_eigenvalue(l);
    }
  }
  if (eff.spectrum.min_value() < tol) throw RankDeficientError(eff.spectrum.min_value(), tol);
  return eff;
}

/// Denoiser whose score is -(sigma^2 I + r^2 S)^{-1}(x - r alpha mu_hat).
inline LinearDenoiser linear_denoiser(const EffectiveScoreSpec& eff, double t) {
  return detail::denoiser_from_spectrum(eff.spectrum, eff.mu_hat, eff.alpha, t);
}

inline LinearDenoiser clean_denoiser(const ClassStats& stats, double t) {
  return detail::denoiser_from_spectrum(stats.spectrum, stats.mean, 1.0, t);
}

inline LinearDenoiser corrupted_denoiser(const ClassStats& stats, const CorruptionSpec& spec, double t) {
  schedule_at(t);
  if (perturbation_variance(spec, stats.dim()) == 0.0) return clean_denoiser(stats, t);
  const auto eff = effective_spec(stats, spec, -std::numeric_limits<double>::infinity());
  return linear_denoiser(eff, t);
}

inline Vector score_from_denoiser(const LinearDenoiser& den, std::span<const double> x) {
  const Schedule s = detail::checked_schedule(den.t);
  return (-1.0 / s.sigma) * den.apply(x);
}

/// Exact conditional score of N(mu, I) pushed through the OU process.
inline Vector ground_truth_score(std::span<const double> mu, double t, std::span<const double> x) {
  const Schedule s = schedule_at(t);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i] + s.r * mu[i];
  return out;
}

/// Minimiser of the expected per-class loss
///   (1/n) sum_i E || W (r x_i + sigma eps) + b (1 + delta) - eps ||^2,  Var(delta) = nu^2,
/// obtained by solving the stationarity equations built from the raw sample
/// moments. Each row p of W couples only with b_p:
///   [ r^2 M2 + sigma^2 I   r m1  ] [ W_p^T ]   [ sigma e_p ]
///   [ r m1^T               1+nu^2 ] [ b_p   ] = [ 0         ]
inline LinearDenoiser solve_normal_equations(std::span<const Vector> points, double t, double nu2) {
  if (points.empty()) throw Error(ErrorCode::EmptyClass, "no samples");
  if (nu2 < 0.0) throw Error(ErrorCode::ConfigError, "perturbation variance must be >= 0");
  const Schedule s = detail::checked_schedule(t);
  const std::size_t d = points.front().size();
  const double n = static_cast<double>(points.size());

  Vector m1(d, 0.0);
  Matrix m2(d, d);
  for (const auto& x : points)
    for (std::size_t i = 0; i < d; ++i) {
      m1[i] += x[i];
      for (std::size_t j = 0; j < d; ++j) m2(i, j) += x[i] * x[j];
    }
  for (double& v : m1) v /= n;
  for (double& v : m2.data()) v /= n;

  Matrix system(d + 1, d + 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) system(i, j) = s.r * s.r * m2(i, j);
    system(i, i) += s.sigma * s.sigma;
    system(i, d) = s.r * m1[i];
    system(d, i) = s.r * m1[i];
  }
  system(d, d) = 1.0 + nu2;

  LinearDenoiser den;
  den.t = t;
  den.W = Matrix(d, d);
  den.b = Vector(d);
  for (std::size_t p = 0; p < d; ++p) {
    Vector rhs(d + 1, 0.0);
    rhs[p] = s.sigma;
    const Vector sol = detail::solve_linear(system, rhs);
    for (std::size_t j = 0; j < d; ++j) den.W(p, j) = sol[j];
    den.b[p] = sol[d];
  }
  return den;
}

// ---------------------------------------------------------------------------
// Stochastic training

/// One minibatch of the sampled loss with all noise frozen:
///   L = (1/B) sum_i || W a_i + s_i b - eps_i ||^2,  a_i = r x_i + sigma eps_i,  s_i = 1 + delta_i.
struct SampledBatch {
  std::vector<Vector> inputs;
  std::vector<Vector> targets;
  Vector embed_scale;
};

struct LossGradient {
  Matrix dW;
  Vector db;
};

inline SampledBatch draw_batch(std::span<const Vector> points, const Schedule& s,
                               const CorruptionSpec& spec, std::size_t batch, Rng& rng) {
  const std::size_t d = points.front().size();
  SampledBatch out;
  out.inputs.resize(batch, Vector(d));
  out.targets.resize(batch, Vector(d));
  out.embed_scale.resize(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const Vector& x = points[rng.below(points.size())];
    for (std::size_t j = 0; j < d; ++j) {
      const double eps = rng.normal();
      out.targets[i][j] = eps;
      out.inputs[i][j] = s.r * x[j] + s.sigma * eps;
    }
    out.embed_scale[i] = 1.0 + draw_perturbation(spec, d, rng);
  }
  return out;
}

inline double sampled_loss(const Matrix& W, std::span<const double> b, const SampledBatch& batch) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const Vector wa = W * batch.inputs[i];
    for (std::size_t j = 0; j < wa.size(); ++j) {
      const double res = wa[j] + batch.embed_scale[i] * b[j] - batch.targets[i][j];
      total += res * res;
    }
  }
  return total / static_cast<double>(batch.inputs.size());
}

inline LossGradient sampled_loss_gradient(const Matrix& W, std::span<const double> b,
                                          const SampledBatch& batch) {
  const std::size_t d = b.size();
  LossGradient g{Matrix(d, d), Vector(d, 0.0)};
  const double scale = 2.0 / static_cast<double>(batch.inputs.size());
  Vector res(d);
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const Vector& a = batch.inputs[i];
    const Vector wa = W * a;
    for (std::size_t j = 0; j < d; ++j) res[j] = wa[j] + batch.embed_scale[i] * b[j] - batch.targets[i][j];
    for (std::size_t p = 0; p < d; ++p) {
      const double rp = scale * res[p];
      for (std::size_t q = 0; q < d; ++q) g.dW(p, q) += rp * a[q];
      g.db[p] += rp * batch.embed_scale[i];
    }
  }
  return g;
}

struct SgdOptions {
  std::size_t steps = 50000;
  std::size_t batch = 64;
  /// Defaults to 0.05 / (1 + sigma_t^2).
  std::optional<double> learning_rate;
  /// Returned parameters are the mean of the iterates over this trailing
  /// fraction of the run (0 returns the last iterate).
  double average_fraction = 0.5;
};

/// Plain minibatch gradient descent on the sampled loss, starting from W = 0,
/// b = 0, with fresh x, eps and delta every step.
inline LinearDenoiser sgd_train(std::span<const Vector> points, double t, const CorruptionSpec& spec,
                                const SgdOptions& opts, Rng& rng) {
  if (points.empty()) throw Error(ErrorCode::EmptyClass, "no samples");
  if (opts.steps == 0 || opts.batch == 0) throw Error(ErrorCode::ConfigError, "steps and batch must be >= 1");
  const Schedule s = detail::checked_schedule(t);
  const double lr = opts.learning_rate.value_or(0.05 / (1.0 + s.sigma * s.sigma));
  if (!(lr > 0.0)) throw Error(ErrorCode::ConfigError, "learning rate must be > 0");

  const std::size_t d = points.front().size();
  Matrix W(d, d);
  Vector b(d, 0.0);
  Matrix W_avg(d, d);
  Vector b_avg(d, 0.0);
  const std::size_t avg_from =
      opts.steps - static_cast<std::size_t>(opts.average_fraction * static_cast<double>(opts.steps));
  std::size_t averaged = 0;
  double initial_loss = -1.0;

  for (std::size_t step = 0; step < opts.steps; ++step) {
    const SampledBatch batch = draw_batch(points, s, spec, opts.batch, rng);
    const double loss = sampled_loss(W, b, batch);
    if (initial_loss < 0.0) initial_loss = loss;
    if (!std::isfinite(loss) || loss > 1e6 * initial_loss)
      throw Error(ErrorCode::Diverged, "loss " + std::to_string(loss) + " at step " + std::to_string(step));
    const LossGradient g = sampled_loss_gradient(W, b, batch);
    for (std::size_t k = 0; k < W.data().size(); ++k) W.data()[k] -= lr * g.dW.data()[k];
    for (std::size_t k = 0; k < d; ++k) b[k] -= lr * g.db[k];

    if (step >= avg_from) {
      ++averaged;
      const double w = 1.0 / static_cast<double>(averaged);
      for (std::size_t k = 0; k < W.data().size(); ++k) W_avg.data()[k] += w * (W.data()[k] - W_avg.data()[k]);
      for (std::size_t k = 0; k < d; ++k) b_avg[k] += w * (b[k] - b_avg[k]);
    }
  }

  if (averaged == 0) return {t, W, b};
  return {t, W_avg, b_avg};
}

}  // namespace gmmdiff
