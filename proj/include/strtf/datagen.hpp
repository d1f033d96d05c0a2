#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "strtf/numerics/rng.hpp"
#include "strtf/numerics/tensor.hpp"

namespace strtf {

enum class RecipeKind { sine, chirp, smoothed_noise };

std::string to_string(RecipeKind kind);
RecipeKind recipe_kind_from_string(const std::string& name);

/// One synthetic source. `period` is the dominant period in samples (the
/// start period for a chirp, the Gaussian smoothing width for smoothed noise).
struct SourceRecipe {
  RecipeKind kind = RecipeKind::sine;
  double period = 64.0;
  double harmonic = 0.0;       // sine: relative amplitude of the second harmonic
  double end_period = 0.0;     // chirp: period reached at the last sample
  double perturbation = 0.0;   // relative amplitude of added smoothed noise
  double smoothing = 0.0;      // std (samples) of the perturbation's smoothing kernel; 0 = period/8

  friend bool operator==(const SourceRecipe&, const SourceRecipe&) = default;
};

enum class MixingKind { linear, nonlinear };

std::string to_string(MixingKind kind);
MixingKind mixing_kind_from_string(const std::string& name);

struct SyntheticSpec {
  Index length = 1000;
  std::vector<SourceRecipe> recipes;
  int channels = 3;
  MixingKind mixing = MixingKind::linear;
  /// Explicit m x K mixing matrix; empty draws a random rotation (m == K) or
  /// a scaled Gaussian matrix.
  Matrix mixing_matrix;
  double noise_std = 0.01;
  std::uint64_t seed = 0;
  /// Minimum pairwise separation of lagged autocorrelation signatures enforced
  /// at generation; 0 disables the check.
  double min_signature_gap = 0.0;

  [[nodiscard]] int sources() const { return static_cast<int>(recipes.size()); }
  void validate() const;
};

/// T = 1000, three sines with a second harmonic at periods 16, 64 and 256,
/// 5% smoothed-noise perturbation, random rotation mixing, noise std 0.01.
SyntheticSpec case_study_preset(std::uint64_t seed = 0);

struct Dataset {
  Matrix observed;    // T x m
  Matrix references;  // T x K
  Matrix mixing;      // m x K
  SyntheticSpec spec;
};

/// T x K, every column zero-mean with unit population std.
Matrix generate_sources(const SyntheticSpec& spec);

/// Haar-distributed orthogonal matrix.
Matrix random_rotation(int n, Rng& rng);

/// Row-wise y = A x (+ noise) or y = g(A x) + noise with g(z) = tanh(z) + z/10.
Matrix mix_sources(const Matrix& sources, const Matrix& mixing, MixingKind kind, double noise_std,
                   Rng& rng);

/// Rejects matrices whose smallest singular value is below 1e-8 or that have
/// fewer rows than columns.
void check_full_column_rank(const Matrix& mixing);

Dataset generate_dataset(const SyntheticSpec& spec);

/// Lag-tau autocorrelation of each column.
Vector autocorrelation(const Matrix& x, Index lag);

/// min over column pairs of max over lags |rho_i(tau) - rho_j(tau)|.
double signature_gap(const Matrix& x, std::span<const Index> lags);

std::string spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const std::string& text);

}  // namespace strtf
