#include <cmath>
#include <functional>
#include <numbers>

#include <gtest/gtest.h>

#include "strtf/datagen.hpp"
#include "strtf/eval.hpp"
#include "strtf/numerics/rng.hpp"

using namespace strtf;

namespace {

/// Recursive enumeration, independent of the library's next_permutation loop.
double brute_force_best(const Matrix& rho, std::vector<int>& used, int row) {
  const int k = static_cast<int>(rho.rows());
  if (row == k) return 0.0;
  double best = -1.0;
  for (int j = 0; j < k; ++j) {
    if (used[static_cast<std::size_t>(j)]) continue;
    used[static_cast<std::size_t>(j)] = 1;
    best = std::max(best, rho(row, j) + brute_force_best(rho, used, row + 1));
    used[static_cast<std::size_t>(j)] = 0;
  }
  return best;
}

Matrix ar1(double phi, Index length, Rng& rng) {
  Matrix x(length, 1);
  double v = 0.0;
  for (Index t = 0; t < length; ++t) {
    v = phi * v + rng.normal();
    x(t, 0) = v;
  }
  return x;
}

}  // namespace

TEST(Correlation, SelfNegatedAndAffine) {
  Rng rng(1);
  const Matrix x = rng.normal_matrix(200, 3, 1.0);
  const Matrix self = correlation_matrix(x, x);
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(self(k, k), 1.0, 1e-12);
  EXPECT_LT(self(0, 1), 0.3);
  const Matrix neg = correlation_matrix(Matrix(-x), x);
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(neg(k, k), 1.0, 1e-12);
  const Matrix affine = correlation_matrix(Matrix((2.0 * x).array() + 5.0), x);
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(affine(k, k), 1.0, 1e-12);
}

TEST(Correlation, ConstantColumnGivesZeros) {
  Rng rng(2);
  Matrix s = rng.normal_matrix(50, 2, 1.0);
  s.col(1).setConstant(3.0);
  const Matrix rho = correlation_matrix(s, rng.normal_matrix(50, 2, 1.0));
  EXPECT_EQ(rho(1, 0), 0.0);
  EXPECT_EQ(rho(1, 1), 0.0);
}

TEST(Correlation, RejectsSingleSample) {
  EXPECT_THROW(correlation_matrix(Matrix::Ones(1, 2), Matrix::Ones(1, 2)), std::invalid_argument);
  EXPECT_THROW(correlation_matrix(Matrix::Ones(3, 2), Matrix::Ones(4, 2)), ShapeError);
}

TEST(Permutation, HandExamples) {
  MatchResult id = best_permutation(Matrix::Identity(3, 3));
  EXPECT_EQ(id.permutation, (std::vector<int>{0, 1, 2}));
  EXPECT_DOUBLE_EQ(id.mac, 1.0);
  const Matrix anti = Matrix::Identity(3, 3).rowwise().reverse();
  MatchResult rev = best_permutation(anti);
  EXPECT_EQ(rev.permutation, (std::vector<int>{2, 1, 0}));
  EXPECT_DOUBLE_EQ(rev.mac, 1.0);
  const Matrix rho = (Matrix(2, 2) << 0.9, 0.2, 0.3, 0.8).finished();
  MatchResult two = best_permutation(rho);
  EXPECT_EQ(two.permutation, (std::vector<int>{0, 1}));
  EXPECT_NEAR(two.mac, 0.85, 1e-15);
}

TEST(Permutation, TiesGoToTheLexicographicallySmallest) {
  const MatchResult r = best_permutation(Matrix::Constant(3, 3, 0.5));
  EXPECT_EQ(r.permutation, (std::vector<int>{0, 1, 2}));
}

TEST(Permutation, AgreesWithBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 5;
    const Matrix rho = rng.uniform_matrix(k, k, 0.0, 1.0);
    std::vector<int> used(static_cast<std::size_t>(k), 0);
    const double best = brute_force_best(rho, used, 0);
    const MatchResult r = best_permutation(rho);
    ASSERT_NEAR(r.mac * k, best, 1e-12) << trial;
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += rho(i, r.permutation[static_cast<std::size_t>(i)]);
    ASSERT_NEAR(sum / k, r.mac, 1e-15);
  }
}

TEST(Permutation, RejectsLargeK) {
  EXPECT_THROW(best_permutation(Matrix::Identity(9, 9)), std::invalid_argument);
  EXPECT_NO_THROW(best_permutation(Matrix::Identity(8, 8)));
}

TEST(Match, InvariantUnderPermutationAndSignFlip) {
  Rng rng(4);
  const Matrix x = rng.normal_matrix(300, 4, 1.0);
  const Matrix s = x + rng.normal_matrix(300, 4, 0.7);
  const double base = match_sources(s, x).mac;
  Eigen::PermutationMatrix<Eigen::Dynamic> p(4);
  p.indices() << 2, 3, 0, 1;
  Matrix flipped = s * p;
  flipped.col(1) *= -1.0;
  flipped.col(3) *= -3.0;
  EXPECT_NEAR(match_sources(flipped, x).mac, base, 1e-12);
}

TEST(Match, RecoversPermutationAndSigns) {
  Rng rng(5);
  const Matrix x = rng.normal_matrix(400, 3, 1.0);
  Matrix s(400, 3);
  s.col(0) = -x.col(2);
  s.col(1) = 0.5 * x.col(0);
  s.col(2) = x.col(1);
  const MatchResult m = match_sources(s, x);
  EXPECT_EQ(m.permutation, (std::vector<int>{2, 0, 1}));
  EXPECT_EQ(m.signs, (std::vector<int>{-1, 1, 1}));
  EXPECT_NEAR(m.mac, 1.0, 1e-12);
}

TEST(Align, NegatedInputBecomesZScoredReference) {
  Rng rng(6);
  const Matrix x = rng.normal_matrix(100, 2, 2.0).array() + 1.0;
  const Matrix s = -x;
  const Matrix aligned = align_and_normalize(s, x, match_sources(s, x));
  EXPECT_LE((aligned - zscore_columns(x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Align, OutputIsZScoredAndIdempotent) {
  Rng rng(7);
  const Matrix x = rng.normal_matrix(120, 3, 1.0);
  const Matrix s = 3.0 * x + rng.normal_matrix(120, 3, 0.5);
  const Matrix once = align_and_normalize(s, x, match_sources(s, x));
  const Matrix twice = align_and_normalize(once, x, match_sources(once, x));
  EXPECT_LE((once - twice).cwiseAbs().maxCoeff(), 1e-12);
  for (Index k = 0; k < 3; ++k) {
    EXPECT_LE(std::abs(once.col(k).mean()), 1e-10);
    const double sd = std::sqrt((once.col(k).array() - once.col(k).mean()).square().mean());
    EXPECT_NEAR(sd, 1.0, 1e-10);
  }
}

TEST(Align, ConstantColumnBecomesZeros) {
  Matrix c = Matrix::Ones(10, 1);
  EXPECT_TRUE((zscore_columns(c).array() == 0.0).all());
}

TEST(LaggedCovariance, LagZeroIsSymmetricPsd) {
  Rng rng(8);
  Matrix x = rng.normal_matrix(500, 4, 1.0);
  x.rowwise() -= x.colwise().mean();
  const Matrix c = lagged_covariance(x, 0);
  EXPECT_EQ(c, c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  EXPECT_LE((c - x.transpose() * x / 500.0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LaggedCovariance, WhiteNoiseOffDiagonalsWithinCltBound) {
  Rng rng(9);
  const Index t = 10000;
  Matrix x = rng.normal_matrix(t, 3, 1.0);
  x.rowwise() -= x.colwise().mean();
  const Matrix c = lagged_covariance(x, 1);
  const double bound = 4.0 / std::sqrt(static_cast<double>(t));
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      if (i != j) EXPECT_LE(std::abs(c(i, j)), bound);
    }
  }
}

TEST(LaggedCovariance, PeriodTwoRepeatsAtLagTwo) {
  Matrix x(10, 1);
  for (Index t = 0; t < 10; ++t) x(t, 0) = (t % 2 == 0) ? 1.0 : -1.0;
  EXPECT_EQ(lagged_covariance(x, 2)(0, 0), lagged_covariance(x, 0)(0, 0));
  EXPECT_EQ(lagged_covariance(x, 1)(0, 0), -1.0);
  EXPECT_THROW(lagged_covariance(x, 10), std::invalid_argument);
}

TEST(Whiten, CovarianceIsIdentity) {
  Rng rng(10);
  const Matrix x = rng.normal_matrix(800, 3, 1.0);
  const Matrix a = rng.normal_matrix(5, 3, 1.0);
  const Matrix y = x * a.transpose();
  const Whitened w = whiten(y, 3);
  const Matrix cov = w.data.transpose() * w.data / 800.0;
  EXPECT_LE((cov - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(w.data.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Whiten, RejectsRankDeficientObservations) {
  Rng rng(11);
  Matrix y = rng.normal_matrix(100, 3, 1.0);
  y.col(2) = y.col(0) + y.col(1);
  EXPECT_THROW(whiten(y, 3), NumericError);
  EXPECT_THROW(whiten(y, 4), std::invalid_argument);
}

TEST(JointDiagonalize, OffDiagonalEnergyNeverIncreases) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Matrix> mats;
    for (int i = 0; i < 4; ++i) {
      Matrix m = rng.normal_matrix(4, 4, 1.0);
      mats.push_back(0.5 * (m + m.transpose()));
    }
    const JointDiagonalization jd = joint_diagonalize(mats, 1e-12, 100, true);
    ASSERT_GE(jd.history.size(), 2u);
    for (std::size_t i = 1; i < jd.history.size(); ++i) {
      ASSERT_LE(jd.history[i], jd.history[i - 1] + 1e-12) << trial << " " << i;
    }
    const Matrix q = jd.rotation;
    EXPECT_LE((q.transpose() * q - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(off_diagonal_energy(jd.diagonalized), jd.history.back(), 1e-9);
  }
}

TEST(JointDiagonalize, CommutingFamilyIsExactlyDiagonalized) {
  Rng rng(13);
  const Matrix q = random_rotation(4, rng);
  std::vector<Matrix> mats;
  for (int i = 0; i < 3; ++i) {
    const Vector d = rng.normal_matrix(4, 1, 1.0).col(0);
    mats.push_back(q * d.asDiagonal() * q.transpose());
  }
  const JointDiagonalization jd = joint_diagonalize(mats);
  EXPECT_LE(off_diagonal_energy(jd.diagonalized), 1e-18);
}

TEST(Baseline, RecoversTwoAutoregressiveSources) {
  Rng rng(14);
  const Index t = 5000;
  Matrix x(t, 2);
  x.col(0) = ar1(0.9, t, rng);
  x.col(1) = ar1(-0.5, t, rng);
  const Matrix a = random_rotation(2, rng);
  const Matrix y = x * a.transpose();
  const std::vector<Index> lags{1, 2, 3};
  const BaselineResult r = joint_diag_baseline(y, lags, 2);
  const MatchResult m = match_sources(r.sources, x);
  for (int k = 0; k < 2; ++k) {
    EXPECT_GE(m.correlation(k, m.permutation[static_cast<std::size_t>(k)]), 0.99);
  }
  EXPECT_TRUE(r.identifiable);
  EXPECT_LE((r.rotation.transpose() * r.rotation - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(),
            1e-10);
}

TEST(Baseline, AlreadySeparatedInputNeedsNoRotation) {
  Rng rng(15);
  const Index t = 4000;
  Matrix x(t, 2);
  x.col(0) = ar1(0.8, t, rng);
  x.col(1) = ar1(-0.3, t, rng);
  const BaselineResult first = joint_diag_baseline(x, kDefaultLags, 2);
  const BaselineResult again = joint_diag_baseline(first.sources, kDefaultLags, 2);
  EXPECT_LE((again.rotation.cwiseAbs() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE(again.off_diagonality, first.off_diagonality + 1e-12);
}

TEST(Baseline, IdenticalSpectraAreFlaggedNonIdentifiable) {
  const Index t = 5000;
  Matrix x(t, 2);
  for (Index i = 0; i < t; ++i) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / 50.0;
    x(i, 0) = std::sin(phase);
    x(i, 1) = std::cos(phase);
  }
  Rng rng(16);
  const BaselineResult r = joint_diag_baseline(x * random_rotation(2, rng).transpose(),
                                               std::vector<Index>{1, 2, 3}, 2);
  EXPECT_FALSE(r.identifiable);
}
