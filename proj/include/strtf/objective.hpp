#pragma once

#include <span>
#include <string>
#include <vector>

#include "strtf/controller.hpp"
#include "strtf/numerics/ops.hpp"
#include "strtf/numerics/rng.hpp"
#include "strtf/strformer.hpp"

namespace strtf {

enum class MixerKind { affine, mlp };

std::string to_string(MixerKind kind);
MixerKind mixer_kind_from_string(const std::string& name);

struct MixerConfig {
  MixerKind kind = MixerKind::affine;
  int hidden = 32;  // mlp only
  bool standardize_input = false;
};

/// Time-shared row-wise map from K latent coordinates to m observed channels.
/// Affine: y = s A^T + b. MLP: y = gelu(s W1 + b1) W2 + b2.
struct Mixer {
  MixerConfig config;
  std::vector<ad::Parameter> params;

  [[nodiscard]] int inputs() const;
  [[nodiscard]] int outputs() const;

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& p : params) f(p);
  }
};

/// Xavier-initialized mixer.
Mixer make_mixer(int sources, int channels, const MixerConfig& config, Rng& rng);
/// Affine mixer with explicit weight (m x K) and bias (1 x m).
Mixer make_affine_mixer(const Matrix& weight, const Matrix& bias, bool standardize_input = false);

struct ObjectiveWeights {
  double nu_y = 1e-2;
  double lambda_str = 1.0;
  double lambda_sep = 0.1;
  double lambda_smooth = 1e-3;
  double lambda_ent = 1e-2;
  double lambda_gap = 1.0;
  int difference_order = 1;
  double std_eps = 1e-8;
};

/// Unweighted loss terms plus the weighted total.
struct LossBreakdown {
  double rec = 0.0;
  double str = 0.0;
  double sep = 0.0;
  double smooth = 0.0;
  double ent = 0.0;
  double gap = 0.0;
  double total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// S, or its column-wise z-score (population std guarded as sqrt(var + eps^2)).
ad::Tensor decoder_input(ad::Tensor sources, bool standardize, double std_eps = 1e-8);

ad::Tensor mix(ad::Tensor decoder_in, Mixer& mixer);

/// ||Y - Y_hat||_F^2 / (2 nu_y).
ad::Tensor reconstruction_loss(ad::Tensor observed, ad::Tensor predicted, double nu_y);

/// ||Z^T Z / T - I||_F^2 with Z the centered columns divided by (std + eps).
ad::Tensor separation_penalty(ad::Tensor sources, double std_eps = 1e-8);

/// ||D_o S||_F^2 / ((T - o) K) with forward differences of order 1 or 2.
ad::Tensor smoothness_penalty(ad::Tensor sources, int order);

struct ObjectiveTerms {
  ad::Tensor rec, str, sep, smooth, ent, gap, total;
  StructuralLoss structural;
  ControllerTensors controller;
  ad::Tensor sources;

  [[nodiscard]] LossBreakdown breakdown() const;
};

/// Everything the objective touches for one evaluation; references only.
struct ObjectiveInputs {
  const Matrix& observed;
  ad::Parameter& sources;
  Mixer& mixer;
  std::span<BranchParams> branches;
  std::span<const PatchSpec> specs;
  ControllerParams& controller;
  const ObjectiveWeights& weights;
};

/// Builds the full objective on `graph`. Terms whose weight is zero are still
/// reported but do not enter the total.
ObjectiveTerms total_objective(ad::Graph& graph, const ObjectiveInputs& in,
                               std::span<const MaskSet> masks);

ObjectiveTerms total_objective(ad::Graph& graph, const ObjectiveInputs& in, double mask_ratio,
                               Rng& rng);

}  // namespace strtf
