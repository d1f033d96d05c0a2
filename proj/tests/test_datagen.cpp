#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "strtf/datagen.hpp"
#include "strtf/eval.hpp"

using namespace strtf;

namespace {

/// Period of the largest naive-DFT magnitude, excluding the zero frequency.
/// Also returns the bin width in period units at that frequency.
std::pair<double, double> dominant_period(const Vector& x) {
  const Index n = x.size();
  double best = -1.0;
  Index best_f = 1;
  for (Index f = 1; f <= n / 2; ++f) {
    std::complex<double> acc = 0.0;
    for (Index t = 0; t < n; ++t) {
      acc += x(t) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(f * t) /
                                        static_cast<double>(n));
    }
    if (std::abs(acc) > best) {
      best = std::abs(acc);
      best_f = f;
    }
  }
  const double nd = static_cast<double>(n);
  const double f = static_cast<double>(best_f);
  return {nd / f, nd / f - nd / (f + 1.0)};
}

SyntheticSpec sine_spec(std::uint64_t seed = 0) {
  SyntheticSpec spec;
  spec.length = 1000;
  for (double p : {16.0, 64.0, 256.0}) spec.recipes.push_back(SourceRecipe{RecipeKind::sine, p});
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST(Sources, DominantPeriodMatchesRecipe) {
  const Matrix x = generate_sources(sine_spec());
  const double periods[] = {16.0, 64.0, 256.0};
  for (Index k = 0; k < 3; ++k) {
    const auto [period, bin] = dominant_period(x.col(k));
    EXPECT_LE(std::abs(period - periods[k]), bin + 1e-9) << k << " got " << period;
  }
}

TEST(Sources, PresetDominantPeriodsMatch) {
  const Matrix x = generate_sources(case_study_preset(3));
  const double periods[] = {16.0, 64.0, 256.0};
  for (Index k = 0; k < 3; ++k) {
    const auto [period, bin] = dominant_period(x.col(k));
    EXPECT_LE(std::abs(period - periods[k]), bin + 1e-9) << k << " got " << period;
  }
}

TEST(Sources, ColumnsAreStandardized) {
  for (const SyntheticSpec& spec : {sine_spec(), case_study_preset(1)}) {
    const Matrix x = generate_sources(spec);
    for (Index k = 0; k < x.cols(); ++k) {
      EXPECT_LE(std::abs(x.col(k).mean()), 1e-10);
      const double sd = std::sqrt((x.col(k).array() - x.col(k).mean()).square().mean());
      EXPECT_NEAR(sd, 1.0, 1e-10);
    }
  }
}

TEST(Sources, SameSeedSameData) {
  EXPECT_EQ(generate_sources(case_study_preset(5)), generate_sources(case_study_preset(5)));
  EXPECT_NE(generate_sources(case_study_preset(5)), generate_sources(case_study_preset(6)));
}

TEST(Sources, ChirpAndSmoothedNoiseAreFinite) {
  SyntheticSpec spec;
  spec.length = 500;
  spec.recipes = {SourceRecipe{RecipeKind::chirp, 20.0, 0.0, 80.0},
                  SourceRecipe{RecipeKind::smoothed_noise, 30.0}};
  spec.channels = 2;
  const Matrix x = generate_sources(spec);
  EXPECT_TRUE(x.allFinite());
  EXPECT_EQ(x.cols(), 2);
}

TEST(Sources, RejectsInvalidRecipes) {
  SyntheticSpec spec = sine_spec();
  spec.recipes[1].period = 0.0;
  EXPECT_THROW(generate_sources(spec), std::invalid_argument);
  spec = sine_spec();
  spec.recipes[0].kind = RecipeKind::chirp;
  EXPECT_THROW(generate_sources(spec), std::invalid_argument);
  spec = sine_spec();
  spec.recipes.clear();
  EXPECT_THROW(generate_sources(spec), std::invalid_argument);
}

TEST(Mixing, IdentityWithoutNoiseIsExact) {
  const Matrix x = generate_sources(sine_spec());
  Rng rng(1);
  EXPECT_EQ(mix_sources(x, Matrix::Identity(3, 3), MixingKind::linear, 0.0, rng), x);
}

TEST(Mixing, SquareNoiselessMixIsInvertible) {
  Rng rng(2);
  const Matrix x = generate_sources(sine_spec());
  const Matrix a = rng.normal_matrix(3, 3, 1.0);
  const Matrix y = mix_sources(x, a, MixingKind::linear, 0.0, rng);
  const Matrix recovered = a.colPivHouseholderQr().solve(y.transpose()).transpose();
  EXPECT_LE((recovered - x).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Mixing, RotationAtNoiseOnePercentGivesFortyDecibels) {
  SyntheticSpec spec = case_study_preset(4);
  spec.min_signature_gap = 0.0;
  const Dataset d = generate_dataset(spec);
  const Matrix clean = d.references * d.mixing.transpose();
  const Matrix noise = d.observed - clean;
  for (Index c = 0; c < d.observed.cols(); ++c) {
    const double snr = 10.0 * std::log10(clean.col(c).squaredNorm() / noise.col(c).squaredNorm());
    EXPECT_NEAR(snr, 40.0, 1.0) << "channel " << c;
  }
}

TEST(Mixing, RandomRotationIsOrthogonal) {
  Rng rng(3);
  for (int n = 1; n <= 6; ++n) {
    const Matrix q = random_rotation(n, rng);
    EXPECT_LE((q.transpose() * q - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Mixing, RankDeficientMatrixIsRejected) {
  Matrix a(3, 2);
  a << 1, 2, 2, 4, 3, 6;
  EXPECT_THROW(check_full_column_rank(a), std::invalid_argument);
  EXPECT_THROW(check_full_column_rank(Matrix::Ones(1, 2)), std::invalid_argument);
  SyntheticSpec spec = sine_spec();
  spec.recipes.pop_back();
  spec.mixing_matrix = a;
  EXPECT_THROW(generate_dataset(spec), std::invalid_argument);
}

TEST(Mixing, NonlinearMapIsInjectivePerChannel) {
  Rng rng(4);
  const Matrix z = Vector::LinSpaced(200, -6.0, 6.0);
  const Matrix y = mix_sources(z, Matrix::Identity(1, 1), MixingKind::nonlinear, 0.0, rng);
  for (Index t = 1; t < 200; ++t) ASSERT_GT(y(t, 0), y(t - 1, 0));
}

TEST(Dataset, NoiselessLinearDataLiesOnTheExactFiber) {
  SyntheticSpec spec = sine_spec(7);
  spec.noise_std = 0.0;
  const Dataset d = generate_dataset(spec);
  EXPECT_LE((d.observed - d.references * d.mixing.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Dataset, IsBitReproducible) {
  const Dataset a = generate_dataset(case_study_preset(11));
  const Dataset b = generate_dataset(case_study_preset(11));
  EXPECT_EQ(a.observed, b.observed);
  EXPECT_EQ(a.references, b.references);
  EXPECT_EQ(a.mixing, b.mixing);
}

TEST(Dataset, PresetMatchesTheCaseStudyShape) {
  const SyntheticSpec spec = case_study_preset(0);
  EXPECT_EQ(spec.length, 1000);
  EXPECT_EQ(spec.sources(), 3);
  EXPECT_EQ(spec.channels, 3);
  EXPECT_DOUBLE_EQ(spec.noise_std, 0.01);
  const Dataset d = generate_dataset(spec);
  EXPECT_EQ(d.observed.rows(), 1000);
  EXPECT_EQ(d.observed.cols(), 3);
  EXPECT_LE((d.mixing.transpose() * d.mixing - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Dataset, PresetSourcesHaveDistinctTemporalSignatures) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset d = generate_dataset(case_study_preset(seed));
    EXPECT_GE(signature_gap(d.references, kDefaultLags), 0.05) << seed;
  }
}

TEST(Dataset, SignatureGapOracle) {
  Matrix x(6, 2);
  x << 1, 1, -1, 1, 1, 1, -1, 1, 1, 1, -1, 1;
  x.col(1)(5) = 2.0;
  const Vector r = autocorrelation(x, 1);
  // Column 0 alternates around zero: five lag-1 products of -1 over a squared norm of 6.
  EXPECT_NEAR(r(0), -5.0 / 6.0, 1e-15);
  const std::vector<Index> lag1{1};
  EXPECT_NEAR(signature_gap(x, lag1), std::abs(r(1) - r(0)), 1e-15);
}

TEST(Dataset, UnreachableSignatureGapIsRejected) {
  SyntheticSpec spec = sine_spec();
  spec.recipes = {SourceRecipe{RecipeKind::sine, 64.0}, SourceRecipe{RecipeKind::sine, 64.0}};
  spec.channels = 2;
  spec.min_signature_gap = 0.05;
  EXPECT_THROW(generate_dataset(spec), std::invalid_argument);
}

TEST(Dataset, SpecJsonRoundTrip) {
  SyntheticSpec spec = case_study_preset(42);
  spec.mixing = MixingKind::nonlinear;
  spec.mixing_matrix = Matrix::Identity(3, 3);
  const std::string text = spec_to_json(spec);
  EXPECT_EQ(spec_to_json(spec_from_json(text)), text);
  EXPECT_THROW(spec_from_json("{\"length\": 10, \"bogus\": 1}"), std::invalid_argument);
}
