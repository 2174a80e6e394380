#include <gtest/gtest.h>

#include <cmath>

#include "gmmdiff/score.hpp"
#include "test_support.hpp"

namespace gmmdiff {
namespace {

using testing::gauss_jordan_inverse;

constexpr CorruptionSpec kIsotropic(double g) {
  return {g, PerturbationDistribution::Gaussian, CorruptionForm::Isotropic};
}
constexpr CorruptionSpec kRankOne(double g) {
  return {g, PerturbationDistribution::Gaussian, CorruptionForm::RankOne};
}

double denoiser_gap(const LinearDenoiser& a, const LinearDenoiser& b) {
  return std::max(max_abs_diff(a.W, b.W), max_abs_diff(a.b, b.b));
}

std::vector<Vector> random_class(std::size_t d, std::size_t n, Rng& rng) {
  return sample_gaussian(testing::random_vector(d, rng, 2.0), n, rng);
}

TEST(CleanDenoiser, IdentityCovariance) {
  const Vector mu{0.7, -1.1, 0.2};
  const auto stats = make_stats(mu, SymMatrix::identity(3));
  for (double t : {0.05, 0.5, 2.0}) {
    const auto s = schedule_at(t);
    const auto den = clean_denoiser(stats, t);
    EXPECT_LT(max_abs_diff(den.W, s.sigma * Matrix::identity(3)), 1e-15);
    EXPECT_LT(max_abs_diff(den.b, (-s.r * s.sigma) * mu), 1e-15);
  }
}

TEST(CleanDenoiser, LateTimeAsymptote) {
  Rng rng(1);
  const auto stats = class_stats(random_class(3, 50, rng));
  const auto den = clean_denoiser(stats, 40.0);
  EXPECT_LT(max_abs_diff(den.W, Matrix::identity(3)), 1e-12);
  EXPECT_LT(max_abs(den.b), 1e-12);
}

TEST(CleanDenoiser, InvalidTime) {
  const auto stats = make_stats(Vector{0.0}, SymMatrix::identity(1));
  EXPECT_THROW(clean_denoiser(stats, -0.1), Error);
  EXPECT_THROW(corrupted_denoiser(stats, kIsotropic(0.3), -0.1), Error);
}

TEST(NormalEquations, CleanMatchesClosedFormOnGrid) {
  Rng rng(2);
  for (std::size_t d = 1; d <= 8; ++d) {
    for (double t : {0.01, 0.1, 1.0, 3.0}) {
      const auto pts = random_class(d, d + 5 + rng.below(40), rng);
      const auto stats = class_stats(pts);
      EXPECT_LT(denoiser_gap(clean_denoiser(stats, t), solve_normal_equations(pts, t, 0.0)), 1e-9)
          << "d=" << d << " t=" << t;
    }
  }
}

TEST(NormalEquations, RankOneFormMatchesOnGrid) {
  Rng rng(3);
  for (std::size_t d = 1; d <= 8; ++d) {
    for (double t : {0.01, 0.1, 1.0, 3.0}) {
      const double gamma = rng.uniform(0.05, 1.5);
      const auto pts = random_class(d, d + 5 + rng.below(40), rng);
      const auto stats = class_stats(pts);
      const auto closed = corrupted_denoiser(stats, kRankOne(gamma), t);
      EXPECT_LT(denoiser_gap(closed, solve_normal_equations(pts, t, gamma * gamma)), 1e-9)
          << "d=" << d << " t=" << t;
    }
  }
}

TEST(NormalEquations, IsotropicFormDiffersInHigherDimensions) {
  Rng rng(4);
  const auto pts = random_class(3, 40, rng);
  const auto stats = class_stats(pts);
  const auto iso = corrupted_denoiser(stats, kIsotropic(0.8), 0.5);
  const auto oracle = solve_normal_equations(pts, 0.5, 0.64);
  EXPECT_GT(denoiser_gap(iso, oracle), 1e-3);
}

TEST(NormalEquations, OneDimensionalCoincidence) {
  Rng rng(5);
  const auto pts = random_class(1, 30, rng);
  const auto stats = class_stats(pts);
  const auto iso = corrupted_denoiser(stats, kIsotropic(0.6), 0.4);
  const auto r1 = corrupted_denoiser(stats, kRankOne(0.6), 0.4);
  EXPECT_LT(denoiser_gap(iso, r1), 1e-15);
  EXPECT_LT(denoiser_gap(iso, solve_normal_equations(pts, 0.4, 0.36)), 1e-9);
}

TEST(NormalEquations, DependsOnPerturbationOnlyThroughVariance) {
  Rng rng(6);
  const auto pts = random_class(2, 25, rng);
  const CorruptionSpec uniform{0.3, PerturbationDistribution::Uniform, CorruptionForm::RankOne};
  const double nu2 = perturbation_variance(uniform, 2);
  EXPECT_DOUBLE_EQ(nu2, 0.09 / 6.0);
  const double matched_std = std::sqrt(nu2);
  const CorruptionSpec gaussian{matched_std, PerturbationDistribution::Gaussian, CorruptionForm::RankOne};
  EXPECT_LT(denoiser_gap(solve_normal_equations(pts, 0.7, nu2),
                         solve_normal_equations(pts, 0.7, perturbation_variance(gaussian, 2))),
            1e-10);
}

TEST(NormalEquations, Errors) {
  const std::vector<Vector> pts{{1.0, 2.0}};
  EXPECT_THROW(solve_normal_equations({}, 0.5, 0.0), Error);
  try {
    solve_normal_equations(pts, 1e-9, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScheduleSingular);
  }
}

TEST(CorruptedDenoiser, ZeroGammaIsClean) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto stats = class_stats(random_class(1 + rng.below(6), 30, rng));
    const double t = rng.uniform(0.01, 3.0);
    const auto clean = clean_denoiser(stats, t);
    for (auto spec : {kIsotropic(0.0), kRankOne(0.0)}) {
      const auto den = corrupted_denoiser(stats, spec, t);
      EXPECT_EQ(den.W, clean.W);
      EXPECT_EQ(den.b, clean.b);
    }
  }
}

TEST(CorruptedDenoiser, FormsAgreeForZeroMean) {
  Rng rng(8);
  const auto stats = make_stats(Vector(4, 0.0), testing::random_spd(4, rng));
  EXPECT_LT(denoiser_gap(corrupted_denoiser(stats, kIsotropic(0.9), 0.3),
                         corrupted_denoiser(stats, kRankOne(0.9), 0.3)),
            1e-15);
}

TEST(CorruptedDenoiser, IsotropicMatchesDirectInverse) {
  // sigma (sigma^2 I + r^2 Sigma + r^2 g^2/(1+g^2) |mu|^2 I)^{-1}, b = -r/(1+g^2) W mu
  Rng rng(9);
  const auto stats = make_stats(testing::random_vector(3, rng), testing::random_spd(3, rng));
  const double g = 0.7, t = 0.6;
  const auto s = schedule_at(t);
  const double g2 = g * g;
  Matrix m = s.sigma * s.sigma * Matrix::identity(3) + (s.r * s.r) * stats.cov.matrix();
  for (int i = 0; i < 3; ++i) m(i, i) += s.r * s.r * g2 / (1.0 + g2) * stats.mean_norm_sq;
  const Matrix W = s.sigma * gauss_jordan_inverse(m);
  const Vector b = (-s.r / (1.0 + g2)) * (W * stats.mean);
  const auto den = corrupted_denoiser(stats, kIsotropic(g), t);
  EXPECT_LT(max_abs_diff(den.W, W), 1e-12);
  EXPECT_LT(max_abs_diff(den.b, b), 1e-12);
}

TEST(Score, IdentityCovarianceMatchesGroundTruth) {
  const Vector mu{1.0, -2.0};
  const auto stats = make_stats(mu, SymMatrix::identity(2));
  Rng rng(10);
  for (double t : {0.01, 0.3, 2.0}) {
    const auto den = clean_denoiser(stats, t);
    const Vector x = testing::random_vector(2, rng, 3.0);
    EXPECT_LT(max_abs_diff(score_from_denoiser(den, x), ground_truth_score(mu, t, x)), 1e-12);
    const Vector at_mean = schedule_at(t).r * mu;
    EXPECT_LT(max_abs(score_from_denoiser(den, at_mean)), 1e-12);
  }
}

TEST(Score, PureShrinkage) {
  const double t = 0.4;
  const LinearDenoiser den{t, schedule_at(t).sigma * Matrix::identity(2), Vector{0.0, 0.0}};
  const Vector x{0.5, -3.0};
  EXPECT_LT(max_abs_diff(score_from_denoiser(den, x), (-1.0) * x), 1e-15);
}

TEST(Score, GroundTruthExamples) {
  const Vector mu{1.0, 2.0};
  EXPECT_EQ(max_abs(ground_truth_score(mu, 0.0, mu)), 0.0);
  const Vector x{0.3, -0.4};
  EXPECT_EQ(ground_truth_score(Vector{0.0, 0.0}, 1.7, x), (-1.0) * x);
}

TEST(Score, BelowMinimumTime) {
  const auto stats = make_stats(Vector{0.0}, SymMatrix::identity(1));
  const auto den = clean_denoiser(stats, 1e-8);
  try {
    score_from_denoiser(den, Vector{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ScheduleSingular);
  }
}

TEST(ScoreProperty, TwoPathConsistency) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.below(7);
    const auto stats = make_stats(testing::random_vector(d, rng, 2.0), testing::random_spd(d, rng, 0.05));
    const double t = rng.uniform(0.01, 4.0);
    const auto s = schedule_at(t);
    const Matrix inv = gauss_jordan_inverse(s.sigma * s.sigma * Matrix::identity(d) + (s.r * s.r) * stats.cov.matrix());
    const Vector x = testing::random_vector(d, rng, 3.0);
    const Vector expected = (-1.0) * (inv * x) + s.r * (inv * stats.mean);
    EXPECT_LT(max_abs_diff(score_from_denoiser(clean_denoiser(stats, t), x), expected), 1e-10);
  }
}

TEST(EffectiveSpec, Examples) {
  Rng rng(12);
  const auto cov = testing::random_spd(3, rng);
  const Vector e1{1.0, 0.0, 0.0};
  const auto stats = make_stats(e1, cov);

  const auto clean = effective_spec(stats, kIsotropic(0.0));
  EXPECT_EQ(clean.alpha, 1.0);
  EXPECT_EQ(clean.S, stats.cov);

  const auto iso = effective_spec(stats, kIsotropic(1.0));
  EXPECT_DOUBLE_EQ(iso.alpha, 0.5);
  EXPECT_LT(max_abs_diff(iso.S.matrix(), cov.matrix() + 0.5 * Matrix::identity(3)), 1e-15);

  const auto r1 = effective_spec(stats, kRankOne(1.0));
  EXPECT_LT(max_abs_diff(r1.S.matrix(), cov.matrix() + 0.5 * outer(e1, e1)), 1e-15);
  const Matrix rebuilt = r1.spectrum.vectors * Matrix::diagonal(r1.spectrum.values) * r1.spectrum.vectors.transposed();
  EXPECT_LT(max_abs_diff(rebuilt, r1.S.matrix()), 1e-12);
}

TEST(EffectiveSpec, RankDeficient) {
  const std::vector<Vector> pts{{1.0, 0.0}, {0.0, 1.0}};
  const auto stats = class_stats(pts);
  EXPECT_THROW(effective_spec(stats, kIsotropic(0.0)), RankDeficientError);
  // The isotropic inflation lifts the null direction.
  EXPECT_NO_THROW(effective_spec(stats, kIsotropic(0.5)));
}

TEST(PerturbationVariance, Modes) {
  EXPECT_DOUBLE_EQ(perturbation_variance(kIsotropic(0.1), 2), 0.01);
  const CorruptionSpec uniform{0.1, PerturbationDistribution::Uniform, CorruptionForm::Isotropic};
  EXPECT_DOUBLE_EQ(perturbation_variance(uniform, 2), 0.01 / 6.0);
  Rng rng(13);
  const double half = 0.1 / std::sqrt(2.0);
  double sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = draw_perturbation(uniform, 2, rng);
    ASSERT_LE(std::abs(v), half);
    sumsq += v * v;
  }
  EXPECT_NEAR(sumsq / n, 0.01 / 6.0, 4.0 * (0.01 / 6.0) * std::sqrt(0.8 / n));
}

TEST(SgdGradient, MatchesCentralDifferences) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(4);
    const auto pts = random_class(d, 20, rng);
    const auto s = schedule_at(rng.uniform(0.05, 2.0));
    const auto batch = draw_batch(pts, s, kIsotropic(0.3), 16, rng);
    Matrix W = testing::random_matrix(d, d, rng);
    Vector b = testing::random_vector(d, rng);
    const auto g = sampled_loss_gradient(W, b, batch);
    const double h = 1e-6;
    for (std::size_t k = 0; k < W.data().size(); ++k) {
      Matrix wp = W, wm = W;
      wp.data()[k] += h;
      wm.data()[k] -= h;
      const double fd = (sampled_loss(wp, b, batch) - sampled_loss(wm, b, batch)) / (2 * h);
      EXPECT_LE(std::abs(fd - g.dW.data()[k]), 1e-5 * std::max(1.0, std::abs(fd)));
    }
    for (std::size_t k = 0; k < d; ++k) {
      Vector bp = b, bm = b;
      bp[k] += h;
      bm[k] -= h;
      const double fd = (sampled_loss(W, bp, batch) - sampled_loss(W, bm, batch)) / (2 * h);
      EXPECT_LE(std::abs(fd - g.db[k]), 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Sgd, CleanConvergesToClosedForm) {
  Rng rng(15);
  const auto pts = random_class(2, 64, rng);
  const auto stats = class_stats(pts);
  SgdOptions opts;
  opts.steps = 200000;
  const auto den = sgd_train(pts, 0.5, kIsotropic(0.0), opts, rng);
  EXPECT_LT(denoiser_gap(den, clean_denoiser(stats, 0.5)), 1e-3);
}

TEST(Sgd, GaussianPerturbationConvergesToOracle) {
  Rng rng(16);
  const auto pts = random_class(2, 64, rng);
  const auto den = sgd_train(pts, 0.5, kRankOne(0.1), SgdOptions{}, rng);
  EXPECT_LT(denoiser_gap(den, solve_normal_equations(pts, 0.5, 0.01)), 1e-2);
}

TEST(Sgd, UniformPerturbationConvergesToMatchedVariance) {
  Rng rng(17);
  const auto pts = random_class(2, 64, rng);
  const CorruptionSpec uniform{0.1, PerturbationDistribution::Uniform, CorruptionForm::RankOne};
  const auto den = sgd_train(pts, 0.5, uniform, SgdOptions{}, rng);
  EXPECT_LT(denoiser_gap(den, solve_normal_equations(pts, 0.5, 0.01 / 6.0)), 1e-2);
}

TEST(Sgd, LargePerturbationSeparatesFromClean) {
  // At gamma = 1 the oracle moves far from the clean solution; SGD must follow it.
  Rng rng(18);
  const auto pts = random_class(2, 64, rng);
  const auto stats = class_stats(pts);
  const auto den = sgd_train(pts, 0.5, kRankOne(1.0), SgdOptions{}, rng);
  const auto oracle = solve_normal_equations(pts, 0.5, 1.0);
  EXPECT_LT(denoiser_gap(den, oracle), 2e-2);
  EXPECT_GT(denoiser_gap(oracle, clean_denoiser(stats, 0.5)), 0.1);
}

TEST(Sgd, DetectsDivergence) {
  Rng rng(19);
  const auto pts = random_class(2, 16, rng);
  SgdOptions opts;
  opts.learning_rate = 5.0;
  opts.steps = 1000;
  try {
    sgd_train(pts, 0.5, kIsotropic(0.0), opts, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Diverged);
  }
}

}  // namespace
}  // namespace gmmdiff
