#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "strtf/numerics/finite_difference.hpp"
#include "strtf/strformer.hpp"

using namespace strtf;

namespace {

void zero_all(BranchParams& b) {
  b.for_each_parameter([](ad::Parameter& p) { p.value.setZero(); });
}

MaskSet mask_of(std::vector<Index> idx) { return MaskSet{std::move(idx), 0.3}; }

}  // namespace

TEST(Embed, ZeroMapGivesZeroTokensOffTheMask) {
  Rng rng(1);
  BranchParams b = make_branch(0, 4, {}, rng);
  b.in_weight.value.setZero();
  ad::Graph g;
  ad::Tensor patches = g.constant(rng.normal_matrix(6, 4, 1.0), "u");
  const TokenSequence seq = embed_patches(patches, b, mask_of({2}));
  const Matrix pe = positional_encoding(6, 32);
  const Matrix content = seq.tokens.value() - pe;
  for (Index i = 0; i < 6; ++i) {
    if (i == 2) continue;
    EXPECT_LE(content.row(i).cwiseAbs().maxCoeff(), 1e-15) << i;
  }
  EXPECT_LE((content.row(2) - b.mask_token.value).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Embed, MaskedTokenIgnoresPatchContent) {
  Rng rng(2);
  BranchParams b = make_branch(0, 4, {}, rng);
  const Matrix u = rng.normal_matrix(5, 4, 1.0);
  Matrix perturbed = u;
  perturbed.row(3).array() += 7.0;
  ad::Graph g;
  const Matrix t1 = embed_patches(g.constant(u, "u"), b, mask_of({3})).tokens.value();
  const Matrix t2 = embed_patches(g.constant(perturbed, "u"), b, mask_of({3})).tokens.value();
  EXPECT_EQ(t1, t2);
  perturbed.row(1).array() += 1.0;
  const Matrix t3 = embed_patches(g.constant(perturbed, "u"), b, mask_of({3})).tokens.value();
  EXPECT_NE(t1.row(1), t3.row(1));
}

TEST(Embed, IdentityProjection) {
  ArchitectureConfig arch;
  arch.d_model = 4;
  Rng rng(3);
  BranchParams b = make_branch(0, 4, arch, rng);
  b.in_weight.value = Matrix::Identity(4, 4);
  ad::Graph g;
  Matrix u = Matrix::Zero(2, 4);
  u(0, 0) = 1.0;
  const Matrix tokens = embed_patches(g.constant(u, "u"), b, mask_of({1})).tokens.value();
  const Matrix expected = (Matrix(1, 4) << 1, 0, 0, 0).finished();
  EXPECT_LE((tokens.row(0) - positional_encoding(2, 4).row(0) - expected).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(Embed, RejectsWidthMismatchAndBadMaskIndex) {
  Rng rng(4);
  BranchParams b = make_branch(0, 4, {}, rng);
  ad::Graph g;
  EXPECT_THROW(embed_patches(g.constant(Matrix::Zero(3, 5), "u"), b, mask_of({0})), ShapeError);
  EXPECT_THROW(embed_patches(g.constant(Matrix::Zero(3, 4), "u"), b, mask_of({3})),
               std::out_of_range);
}

TEST(Attention, ConstantLogitsAreUniform) {
  const Matrix q = Matrix::Zero(5, 4);
  const Matrix w = attention_weights(q, q, 0.0);
  EXPECT_LE((w.array() - 0.2).abs().maxCoeff(), 1e-15);
}

TEST(Attention, NegativeInfinityBiasZeroesColumn) {
  Rng rng(5);
  const Matrix q = rng.normal_matrix(6, 4, 1.0);
  const Matrix k = rng.normal_matrix(6, 4, 1.0);
  Matrix bias = Matrix::Zero(6, 6);
  bias.col(2).setConstant(-std::numeric_limits<double>::infinity());
  const Matrix w = attention_weights(q, k, 0.3, bias);
  EXPECT_TRUE((w.col(2).array() == 0.0).all());
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
}

TEST(Attention, SteepSlopeConcentratesOnTheDiagonal) {
  const Matrix zero = Matrix::Zero(8, 4);
  const Matrix w = attention_weights(zero, zero, 100.0);
  // Interior row: off-diagonal mass is 2 e^-100 / (1 + ...) < 1e-40.
  for (Index i = 1; i < 7; ++i) {
    EXPECT_GE(w(i, i), 1.0 - 1e-40);
    EXPECT_LE(1.0 - w(i, i), 2.0 * std::exp(-100.0) * 1.0000001);
  }
}

TEST(Attention, RowsSumToOne) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.uniform_index(20));
    const Matrix w = attention_weights(rng.normal_matrix(n, 8, 3.0), rng.normal_matrix(n, 8, 3.0),
                                       rng.uniform() * 2.0);
    for (Index i = 0; i < n; ++i) ASSERT_NEAR(w.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(Attention, DiagonalMassGrowsWithSlope) {
  const Matrix zero = Matrix::Zero(9, 4);
  Vector prev = attention_weights(zero, zero, 0.0).diagonal();
  for (double alpha : {0.05, 0.1, 0.3, 0.7, 1.5, 4.0}) {
    const Vector diag = attention_weights(zero, zero, alpha).diagonal();
    for (Index i = 1; i < 8; ++i) EXPECT_GT(diag(i), prev(i)) << alpha;
    prev = diag;
  }
}

TEST(Attention, HeadGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Index n = 7, d = 4;
    Matrix qkv = rng.normal_matrix(3 * n, d, 1.0);
    const Matrix w = rng.normal_matrix(n, d, 1.0);
    const double alpha0 = 0.4;
    auto evaluate = [&](ad::Graph& g, ad::Tensor all, ad::Tensor alpha) {
      ad::Tensor q = ad::slice(all, 0, 0, n, d);
      ad::Tensor k = ad::slice(all, n, 0, n, d);
      ad::Tensor v = ad::slice(all, 2 * n, 0, n, d);
      return ad::sum(ad::mul(attention_head(q, k, v, alpha), g.constant(w, "w")));
    };
    ad::Parameter p("qkv", qkv);
    ad::Parameter a("alpha", Matrix::Constant(1, 1, alpha0));
    ad::Graph g;
    g.backward(evaluate(g, g.leaf(p), g.leaf(a)));
    const Matrix fd = finite_difference_gradient(
        [&](const Matrix& x) {
          ad::Graph h;
          return evaluate(h, h.constant(x, "qkv"), h.constant(alpha0, "a")).scalar();
        },
        qkv);
    EXPECT_LE(relative_error(p.grad, fd), 1e-4) << seed;
    const Matrix fd_alpha = finite_difference_gradient(
        [&](const Matrix& x) {
          ad::Graph h;
          return evaluate(h, h.constant(qkv, "qkv"), h.constant(x, "a")).scalar();
        },
        a.value);
    EXPECT_LE(relative_error(a.grad, fd_alpha), 1e-4) << seed;
  }
}

TEST(Attention, RejectsNegativeSlope) {
  Rng rng(7);
  BranchParams b = make_branch(0, 4, {}, rng);
  ad::Graph g;
  ad::Tensor x = g.constant(rng.normal_matrix(5, 32, 1.0), "x");
  EXPECT_THROW(locality_attention(x, g.constant(-0.1, "a"), b.blocks[0], b.arch), NumericError);
}

TEST(Encode, ZeroWeightsAreTheIdentity) {
  Rng rng(8);
  BranchParams b = make_branch(0, 4, {}, rng);
  zero_all(b);
  ad::Graph g;
  const Matrix x = rng.normal_matrix(6, 32, 1.0);
  const Matrix out = encode(g.constant(x, "x"), g.constant(0.3, "a"), b).value();
  EXPECT_EQ(out, x);
}

TEST(Encode, ShapeIsPreservedForAnyLength) {
  Rng rng(9);
  BranchParams b = make_branch(0, 4, {}, rng);
  for (Index n = 1; n <= 32; ++n) {
    ad::Graph g;
    const Matrix out = encode(g.constant(rng.normal_matrix(n, 32, 1.0), "x"), g.constant(0.5, "a"), b).value();
    ASSERT_EQ(out.rows(), n);
    ASSERT_EQ(out.cols(), 32);
  }
}

TEST(Encode, Deterministic) {
  Rng rng(10);
  BranchParams b = make_branch(0, 8, {}, rng);
  const Matrix x = rng.normal_matrix(12, 32, 1.0);
  ad::Graph g1, g2;
  EXPECT_EQ(encode(g1.constant(x, "x"), g1.constant(0.2, "a"), b).value(),
            encode(g2.constant(x, "x"), g2.constant(0.2, "a"), b).value());
}

TEST(Energy, ZeroHeadOnZeroSignalIsZero) {
  Rng rng(11);
  BranchParams b = make_branch(0, 4, {}, rng);
  b.out_weight.value.setZero();
  b.out_bias.value.setZero();
  ad::Graph g;
  const PatchSpec spec = PatchSpec::from_ratio(4, 0.5);
  const double e = masked_patch_energy(g.constant(Matrix::Zero(40, 1), "s"), b, spec,
                                       g.constant(0.5, "a"), mask_of({1, 4}))
                       .scalar();
  EXPECT_EQ(e, 0.0);
}

TEST(Energy, ZeroHeadOnOnesIsOne) {
  Rng rng(12);
  BranchParams b = make_branch(0, 4, {}, rng);
  b.out_weight.value.setZero();
  b.out_bias.value.setZero();
  ad::Graph g;
  const PatchSpec spec = PatchSpec::from_ratio(4, 0.5);
  const double e = masked_patch_energy(g.constant(Matrix::Ones(40, 1), "s"), b, spec,
                                       g.constant(0.5, "a"), mask_of({0, 3, 7}))
                       .scalar();
  EXPECT_DOUBLE_EQ(e, 1.0);
}

TEST(Energy, NonnegativeAndFinite) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    BranchParams b = make_branch(0, 8, {}, rng);
    ad::Graph g;
    const double e = masked_patch_energy(g.constant(rng.normal_matrix(64, 1, 3.0), "s"), b,
                                         PatchSpec::from_ratio(8, 0.5), g.constant(0.3, "a"), 0.3, rng)
                         .scalar();
    EXPECT_GE(e, 0.0);
    EXPECT_TRUE(std::isfinite(e));
  }
}

TEST(Energy, GradientInTrajectoryMatchesFiniteDifferences) {
  const PatchSpec spec = PatchSpec::from_ratio(4, 0.5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    BranchParams b = make_branch(0, 4, {}, rng);
    const Matrix s = rng.normal_matrix(32, 1, 1.0);
    const MaskSet mask = sample_mask(patch_count(32, spec), 0.3, rng);
    ad::Parameter p("s", s);
    ad::Graph g;
    g.backward(masked_patch_energy(g.leaf(p), b, spec, g.constant(0.4, "a"), mask));
    const Matrix fd = finite_difference_gradient(
        [&](const Matrix& x) {
          ad::Graph h;
          return masked_patch_energy(h.constant(x, "s"), b, spec, h.constant(0.4, "a"), mask).scalar();
        },
        s);
    EXPECT_LE(relative_error(p.grad, fd), 1e-4) << seed;
  }
}

TEST(Energy, GradientInBranchWeightsMatchesFiniteDifferences) {
  const PatchSpec spec = PatchSpec::from_ratio(4, 0.5);
  Rng rng(21);
  BranchParams b = make_branch(0, 4, {}, rng);
  const Matrix s = rng.normal_matrix(24, 1, 1.0);
  const MaskSet mask = mask_of({1, 5});
  std::vector<ad::Parameter*> params;
  b.for_each_parameter([&](ad::Parameter& p) { params.push_back(&p); });
  ad::Graph g;
  g.backward(masked_patch_energy(g.constant(s, "s"), b, spec, g.constant(0.4, "a"), mask));
  for (ad::Parameter* p : params) {
    const Matrix saved = p->value;
    const Matrix fd = finite_difference_gradient(
        [&](const Matrix& x) {
          p->value = x;
          ad::Graph h;
          const double e =
              masked_patch_energy(h.constant(s, "s"), b, spec, h.constant(0.4, "a"), mask).scalar();
          p->value = saved;
          return e;
        },
        saved);
    if (fd.norm() < 1e-9 && p->grad.norm() < 1e-9) continue;
    EXPECT_LE(relative_error(p->grad, fd), 1e-4) << p->name;
  }
}

namespace {

struct Fixture {
  std::vector<BranchParams> branches;
  std::vector<PatchSpec> specs;
  std::vector<MaskSet> masks;
};

Fixture make_fixture(int sources, std::vector<int> sizes, Index length, std::uint64_t seed) {
  Fixture f;
  Rng rng(seed);
  for (int p : sizes) f.specs.push_back(PatchSpec::from_ratio(p, 0.5));
  for (int k = 0; k < sources; ++k) {
    for (int p : sizes) f.branches.push_back(make_branch(k, p, {}, rng));
  }
  f.masks = sample_masks(length, f.specs, sources, 0.3, rng);
  return f;
}

}  // namespace

TEST(Structural, SingleTermEqualsItsEnergy) {
  Fixture f = make_fixture(1, {4, 8}, 40, 1);
  Rng rng(2);
  const Matrix s = rng.normal_matrix(40, 1, 1.0);
  ad::Graph g;
  Matrix w = Matrix::Zero(1, 2);
  w(0, 0) = 1.0;
  const StructuralLoss l = structural_loss(g.constant(s, "S"), g.constant(w, "pi"),
                                           g.constant(0.5, "a"), f.branches, f.specs, f.masks);
  EXPECT_EQ(l.total.scalar(), l.energies[0].scalar());
}

TEST(Structural, ConvexCombinationOfConstantEnergies) {
  // Zero heads with bias 0 on an all-ones signal give energy 1 for every branch.
  Fixture f = make_fixture(2, {4, 8, 16}, 64, 3);
  for (auto& b : f.branches) {
    b.out_weight.value.setZero();
    b.out_bias.value.setZero();
  }
  Rng rng(4);
  Matrix pi = rng.uniform_matrix(2, 3, 0.1, 1.0);
  for (Index k = 0; k < 2; ++k) pi.row(k) /= pi.row(k).sum();
  ad::Graph g;
  const StructuralLoss l =
      structural_loss(g.constant(Matrix::Ones(64, 2), "S"), g.constant(pi, "pi"),
                      g.constant(Matrix::Constant(2, 1, 0.3), "a"), f.branches, f.specs, f.masks);
  EXPECT_NEAR(l.total.scalar(), 1.0, 1e-15);
}

TEST(Structural, ZeroWeightBranchHasNoInfluence) {
  Fixture f = make_fixture(2, {4, 8}, 48, 5);
  Rng rng(6);
  const Matrix s = rng.normal_matrix(48, 2, 1.0);
  Matrix pi = (Matrix(2, 2) << 0.7, 0.3, 0.0, 1.0).finished();
  auto evaluate = [&](std::vector<BranchParams>& branches) {
    ad::Parameter sp("S", s);
    ad::Graph g;
    const StructuralLoss l = structural_loss(g.leaf(sp), g.constant(pi, "pi"),
                                             g.constant(Matrix::Constant(2, 1, 0.3), "a"), branches,
                                             f.specs, f.masks);
    g.backward(l.total);
    return std::pair{l.total.scalar(), sp.grad};
  };
  const auto [v0, g0] = evaluate(f.branches);
  // Branch (k=1, r=0) carries weight zero; scramble its weights.
  f.branches[2].for_each_parameter([&](ad::Parameter& p) { p.value = rng.normal_matrix(p.value.rows(), p.value.cols(), 2.0); });
  const auto [v1, g1] = evaluate(f.branches);
  EXPECT_EQ(v0, v1);
  EXPECT_EQ(g0, g1);
}

TEST(Structural, GradientColumnsDecouple) {
  Fixture f = make_fixture(3, {4, 8}, 48, 7);
  Rng rng(8);
  const Matrix s = rng.normal_matrix(48, 3, 1.0);
  const Matrix pi = Matrix::Constant(3, 2, 0.5);
  auto grad_at = [&](const Matrix& sv) {
    ad::Parameter sp("S", sv);
    ad::Graph g;
    g.backward(structural_loss(g.leaf(sp), g.constant(pi, "pi"),
                               g.constant(Matrix::Constant(3, 1, 0.3), "a"), f.branches, f.specs,
                               f.masks)
                   .total);
    return sp.grad;
  };
  const Matrix base = grad_at(s);
  Matrix other = s;
  other.col(0) = rng.normal_matrix(48, 1, 5.0);
  other.col(2) = rng.normal_matrix(48, 1, 0.1);
  EXPECT_EQ(base.col(1), grad_at(other).col(1));
}

TEST(Structural, RejectsMismatchedInputs) {
  Fixture f = make_fixture(2, {4, 8}, 40, 9);
  ad::Graph g;
  ad::Tensor s = g.constant(Matrix::Zero(40, 2), "S");
  EXPECT_THROW(structural_loss(s, g.constant(Matrix::Constant(2, 3, 0.3), "pi"),
                               g.constant(Matrix::Constant(2, 1, 0.3), "a"), f.branches, f.specs,
                               f.masks),
               ShapeError);
  f.masks.pop_back();
  EXPECT_THROW(structural_loss(s, g.constant(Matrix::Constant(2, 2, 0.5), "pi"),
                               g.constant(Matrix::Constant(2, 1, 0.3), "a"), f.branches, f.specs,
                               f.masks),
               ShapeError);
}

TEST(Branch, InitializationFollowsTheRecipe) {
  Rng rng(10);
  const BranchParams b = make_branch(1, 8, {}, rng);
  EXPECT_EQ(b.in_weight.value.rows(), 8);
  EXPECT_EQ(b.in_weight.value.cols(), 32);
  EXPECT_EQ(b.out_weight.value.rows(), 32);
  EXPECT_EQ(b.out_weight.value.cols(), 8);
  EXPECT_EQ(b.blocks.size(), 2u);
  const double bound = std::sqrt(6.0 / 40.0);
  EXPECT_LE(b.in_weight.value.cwiseAbs().maxCoeff(), bound);
  EXPECT_TRUE((b.in_bias.value.array() == 0.0).all());
  EXPECT_TRUE((b.blocks[0].norm1_gain.value.array() == 1.0).all());
  EXPECT_LT(b.mask_token.value.cwiseAbs().maxCoeff(), 0.02 * 6);
  ArchitectureConfig bad;
  bad.heads = 3;
  EXPECT_THROW(make_branch(0, 4, bad, rng), std::invalid_argument);
}
