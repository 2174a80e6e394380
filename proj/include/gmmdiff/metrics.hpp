#pragma once

// Diversity (Gaussian differential entropy, nats) and quality (squared
// 2-Wasserstein distance to the ground-truth component) of clean vs corrupted
// generation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gmmdiff/dynamics.hpp"
#include "gmmdiff/error.hpp"
#include "gmmdiff/matrix.hpp"
#include "gmmdiff/model.hpp"
#include "gmmdiff/parallel.hpp"
#include "gmmdiff/rng.hpp"
#include "gmmdiff/score.hpp"
#include "gmmdiff/spectral.hpp"

namespace gmmdiff {

inline double gaussian_entropy(const GaussianMoments& m) {
  const double d = static_cast<double>(m.dim());
  return 0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e) + 0.5 * log_det(eigendecompose(m.cov));
}

/// H(corrupted) - H(clean) for the isotropic corruption, as the per-eigenvalue
/// sum 1/2 sum_i log(1 + gamma^2 ||mu_hat||^2 / ((1 + gamma^2) lambda_i)).
inline double entropy_gap_analytic(const ClassStats& stats, double gamma) {
  const double lmin = stats.spectrum.min_value();
  if (!(lmin > 0.0)) throw RankDeficientError(lmin, 0.0);
  const double g2 = gamma * gamma;
  const double c = g2 / (1.0 + g2) * stats.mean_norm_sq;
  double gap = 0.0;
  for (double l : stats.spectrum.values) gap += std::log1p(c / l);
  return 0.5 * gap;
}

/// Squared W2 between Gaussians:
///   ||mu_a - mu_b||^2 + Tr(A + B - 2 (A^{1/2} B A^{1/2})^{1/2}).
inline double w2_gaussians(const GaussianMoments& a, const GaussianMoments& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::InvalidMatrix, "dimension mismatch");
  const Spectrum sa = eigendecompose(a.cov);
  const Spectrum sb = eigendecompose(b.cov);
  for (double l : sb.values) clamp_psd_eigenvalue(l);
  const SymMatrix root_a = psd_sqrt(sa);
  const SymMatrix middle(root_a.matrix() * b.cov.matrix() * root_a.matrix());
  const Spectrum sm = eigendecompose(middle);
  double cross = 0.0;
  for (double l : sm.values) cross += std::sqrt(clamp_psd_eigenvalue(l));
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  return std::max(0.0, mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross);
}

struct QualityPair {
  double clean = 0.0;      // W2^2(N(mu, I), clean generation)
  double corrupted = 0.0;  // W2^2(N(mu, I), corrupted generation)
};

inline QualityPair quality_pair(const ClassStats& stats, std::span<const double> mu_true, double gamma,
                                CorruptionForm form) {
  const GaussianMoments truth{Vector(mu_true.begin(), mu_true.end()), SymMatrix::identity(mu_true.size())};
  const CorruptionSpec clean_spec{0.0, PerturbationDistribution::Gaussian, form};
  const CorruptionSpec corrupt_spec{gamma, PerturbationDistribution::Gaussian, form};
  const auto clean = limit_moments(effective_spec(stats, clean_spec));
  const auto corrupted = limit_moments(effective_spec(stats, corrupt_spec));
  return {w2_gaussians(truth, clean), w2_gaussians(truth, corrupted)};
}

struct GapReport {
  double gamma = 0.0;
  std::size_t dim = 0;
  std::size_t n_k = 0;
  double entropy_gap = 0.0;   // mean over trials
  double w2_clean = 0.0;      // mean d^2
  double w2_corrupted = 0.0;  // mean d_c^2
  double w2_gap = 0.0;        // mean (d^2 - d_c^2)
  std::size_t trials = 0;
  double standard_error = 0.0;  // of w2_gap
  std::size_t rejections = 0;
};

struct GapOptions {
  double rank_tol = 1e-10;
  std::size_t threads = 1;
};

/// Monte Carlo estimate of E[d^2 - d_c^2] over training sets of n_k draws
/// from N(mu, I). Trial i uses Rng::child(seed, i); rank-deficient draws are
/// redrawn from the same stream and counted.
inline GapReport expected_w2_gap_mc(std::span<const double> mu, std::size_t n_k, double gamma,
                                    CorruptionForm form, std::size_t trials, std::uint64_t seed,
                                    GapOptions opts = {}) {
  if (trials == 0) throw Error(ErrorCode::ConfigError, "trials must be >= 1");
  struct Trial {
    double d2 = 0.0, dc2 = 0.0, entropy = 0.0;
    std::size_t rejected = 0;
  };
  std::vector<Trial> results(trials);
  // Per-trial cap keeps hopeless regimes (n_k <= d) from looping. A trial
  // that exhausts it is treated as degenerate as well.
  const std::size_t max_redraws = std::min<std::size_t>(trials / 10 + 1, 16);

  parallel_for(trials, opts.threads, [&](std::size_t i) {
    Rng rng = Rng::child(seed, i);
    Trial& out = results[i];
    for (;;) {
      const auto pts = sample_gaussian(mu, n_k, rng);
      const ClassStats stats = class_stats(std::span<const Vector>(pts));
      if (stats.spectrum.min_value() < opts.rank_tol) {
        if (++out.rejected > max_redraws) break;
        continue;
      }
      const QualityPair q = quality_pair(stats, mu, gamma, form);
      out.d2 = q.clean;
      out.dc2 = q.corrupted;
      out.entropy = entropy_gap_analytic(stats, gamma);
      break;
    }
  });

  std::size_t rejections = 0;
  bool exhausted = false;
  for (const auto& r : results) {
    rejections += r.rejected;
    exhausted = exhausted || r.rejected > max_redraws;
  }
  if (exhausted || static_cast<double>(rejections) > 0.1 * static_cast<double>(trials))
    throw Error(ErrorCode::DegenerateRegime, std::to_string(rejections) + " rank rejections in " +
                                                 std::to_string(trials) + " trials (n_k=" +
                                                 std::to_string(n_k) + ", d=" + std::to_string(mu.size()) + ")");

  KahanSum s_d2, s_dc2, s_ent, s_gap;
  for (const auto& r : results) {
    s_d2.add(r.d2);
    s_dc2.add(r.dc2);
    s_ent.add(r.entropy);
    s_gap.add(r.d2 - r.dc2);
  }
  const double n = static_cast<double>(trials);
  GapReport rep;
  rep.gamma = gamma;
  rep.dim = mu.size();
  rep.n_k = n_k;
  rep.trials = trials;
  rep.rejections = rejections;
  rep.w2_clean = s_d2.value() / n;
  rep.w2_corrupted = s_dc2.value() / n;
  rep.entropy_gap = s_ent.value() / n;
  rep.w2_gap = s_gap.value() / n;
  if (trials > 1) {
    KahanSum sq;
    for (const auto& r : results) {
      const double dev = (r.d2 - r.dc2) - rep.w2_gap;
      sq.add(dev * dev);
    }
    rep.standard_error = std::sqrt(sq.value() / (n - 1.0) / n);
  }
  return rep;
}

struct McEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// MC estimate of the per-coordinate E[Var(x_i | x_1 + ... + x_n)] for
/// x_i ~ N(0, I): each trial averages (x_ij - xbar_j)^2 over i and j, whose
/// expectation is (n - 1) / n.
inline McEstimate conditional_variance_check(std::size_t n, std::size_t d, std::size_t trials,
                                             std::uint64_t seed, std::size_t threads = 1) {
  if (n < 2) throw Error(ErrorCode::InsufficientSamples, "need n >= 2");
  if (d == 0 || trials < 2) throw Error(ErrorCode::ConfigError, "need d >= 1 and trials >= 2");
  std::vector<double> values(trials);
  const std::size_t shards = (trials + kShardSize - 1) / kShardSize;
  parallel_for(shards, threads, [&](std::size_t s) {
    Rng rng = Rng::child(seed, s);
    std::vector<double> x(n * d);
    Vector mean(d);
    const std::size_t end = std::min(trials, (s + 1) * kShardSize);
    for (std::size_t t = s * kShardSize; t < end; ++t) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          x[i * d + j] = rng.normal();
          mean[j] += x[i * d + j];
        }
      for (double& m : mean) m /= static_cast<double>(n);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) acc += (x[i * d + j] - mean[j]) * (x[i * d + j] - mean[j]);
      values[t] = acc / static_cast<double>(n * d);
    }
  });
  KahanSum total;
  for (double v : values) total.add(v);
  const double m = total.value() / static_cast<double>(trials);
  KahanSum sq;
  for (double v : values) sq.add((v - m) * (v - m));
  return {m, std::sqrt(sq.value() / static_cast<double>(trials - 1) / static_cast<double>(trials))};
}

}  // namespace gmmdiff
