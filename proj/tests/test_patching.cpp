#include <set>

#include <gtest/gtest.h>

#include "strtf/numerics/finite_difference.hpp"
#include "strtf/patching.hpp"

using namespace strtf;

TEST(Stride, HandValues) {
  EXPECT_EQ(compute_stride(8, 0.5), 4);
  EXPECT_EQ(compute_stride(1, 0.1), 1);
  EXPECT_EQ(compute_stride(3, 1.0), 3);
  EXPECT_EQ(compute_stride(32, 0.5), 16);
}

TEST(Stride, RejectsRatioOutsideUnitInterval) {
  EXPECT_THROW(compute_stride(8, 0.0), std::invalid_argument);
  EXPECT_THROW(compute_stride(8, 1.5), std::invalid_argument);
  EXPECT_THROW(compute_stride(8, -0.2), std::invalid_argument);
}

TEST(Extract, TenSamplesPatchFourStrideTwo) {
  Vector s = Vector::LinSpaced(10, 0.0, 9.0);
  const PatchSet ps = extract_patches(s, PatchSpec{4, 2});
  ASSERT_EQ(ps.patches.rows(), 4);
  EXPECT_EQ(ps.starts, (std::vector<Index>{0, 2, 4, 6}));
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) EXPECT_EQ(ps.patches(i, j), 2.0 * i + j);
  }
}

TEST(Extract, WholeTrajectoryPatch) {
  const Vector s = (Vector(4) << 3, 1, 4, 1).finished();
  const PatchSet ps = extract_patches(s, PatchSpec{4, 2});
  ASSERT_EQ(ps.patches.rows(), 1);
  EXPECT_EQ(Vector(ps.patches.row(0).transpose()), s);
}

TEST(Extract, ShortTrajectoryIsDegenerate) {
  const Vector s = Vector::Zero(3);
  EXPECT_THROW(extract_patches(s, PatchSpec{4, 2}), DegenerateScaleError);
}

TEST(Extract, MatchesDirectSlicingExhaustively) {
  for (Index t = 1; t <= 64; ++t) {
    Vector s = Vector::LinSpaced(t, 1.0, static_cast<double>(t)).array().sqrt();
    for (int p = 1; p <= t; ++p) {
      for (int q = 1; q <= p; ++q) {
        const PatchSet ps = extract_patches(s, PatchSpec{p, q});
        const Index n = (t - p) / q + 1;
        ASSERT_EQ(ps.patches.rows(), n);
        for (Index i = 0; i < n; ++i) {
          ASSERT_EQ(ps.starts[static_cast<std::size_t>(i)], i * q);
          ASSERT_EQ(Vector(ps.patches.row(i).transpose()), s.segment(i * q, p));
        }
      }
    }
  }
}

TEST(Extract, IsLinear) {
  Rng rng(3);
  const Vector a = rng.normal_matrix(50, 1, 1.0).col(0);
  const Vector b = rng.normal_matrix(50, 1, 1.0).col(0);
  const PatchSpec spec{8, 3};
  const Vector combo = 2.5 * a - 0.75 * b;
  const Matrix lhs = extract_patches(combo, spec).patches;
  const Matrix rhs = 2.5 * extract_patches(a, spec).patches - 0.75 * extract_patches(b, spec).patches;
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Extract, GraphVersionAgreesAndScatterAddsGradient) {
  Rng rng(4);
  const Matrix s = rng.normal_matrix(20, 1, 1.0);
  const PatchSpec spec{6, 2};
  const Matrix w = rng.normal_matrix(patch_count(20, spec), 6, 1.0);
  ad::Parameter p("s", s);
  ad::Graph g;
  ad::Tensor u = extract_patches(g.leaf(p), spec);
  EXPECT_EQ(u.value(), extract_patches(s.col(0), spec).patches);
  g.backward(ad::sum(ad::mul(u, g.constant(w, "w"))));
  const Matrix fd = finite_difference_gradient(
      [&](const Matrix& x) {
        return (extract_patches(x.col(0), spec).patches.array() * w.array()).sum();
      },
      s);
  EXPECT_LE(relative_error(p.grad, fd), 1e-8);
}

TEST(Mask, CountHandValues) {
  EXPECT_EQ(mask_count(10, 0.25), 3);
  EXPECT_EQ(mask_count(8, 0.0), 1);
  EXPECT_EQ(mask_count(1, 0.9), 1);
  EXPECT_EQ(mask_count(7, 1.0), 7);
}

TEST(Mask, SingletonPatchMasksIt) {
  Rng rng(0);
  const MaskSet m = sample_mask(1, 0.3, rng);
  EXPECT_EQ(m.indices, std::vector<Index>{0});
}

TEST(Mask, SampledIndicesAreDistinctSortedAndInRange) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.uniform_index(60));
    const double ratio = rng.uniform();
    const MaskSet m = sample_mask(n, ratio, rng);
    ASSERT_EQ(static_cast<Index>(m.indices.size()), mask_count(n, ratio));
    ASSERT_TRUE(std::is_sorted(m.indices.begin(), m.indices.end()));
    ASSERT_EQ(std::set<Index>(m.indices.begin(), m.indices.end()).size(), m.indices.size());
    ASSERT_GE(m.indices.front(), 0);
    ASSERT_LT(m.indices.back(), n);
  }
}

TEST(Mask, SameSeedSameMask) {
  Rng a(77), b(77);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(sample_mask(40, 0.3, a).indices, sample_mask(40, 0.3, b).indices);
  }
}

TEST(Mask, SamplingIsRoughlyUniform) {
  Rng rng(5);
  std::vector<int> hits(10, 0);
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) {
    for (Index idx : sample_mask(10, 0.3, rng).indices) ++hits[static_cast<std::size_t>(idx)];
  }
  // Each index is drawn with probability 3/10; allow five binomial std devs.
  const double expected = trials * 0.3;
  const double sd = std::sqrt(trials * 0.3 * 0.7);
  for (int h : hits) EXPECT_NEAR(h, expected, 5 * sd);
}

TEST(Mask, RejectsRatioOutsideUnitInterval) {
  Rng rng(0);
  EXPECT_THROW(sample_mask(5, 1.2, rng), std::invalid_argument);
  EXPECT_THROW(sample_mask(5, -0.1, rng), std::invalid_argument);
}
