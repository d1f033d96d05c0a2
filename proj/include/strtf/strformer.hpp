#pragma once

#include <span>
#include <vector>

#include "strtf/numerics/ops.hpp"
#include "strtf/numerics/rng.hpp"
#include "strtf/patching.hpp"

namespace strtf {

struct ArchitectureConfig {
  int d_model = 32;
  int heads = 2;
  int layers = 2;
  int ff_width = 64;
  double layer_norm_eps = 1e-5;

  [[nodiscard]] int head_dim() const { return d_model / heads; }
};

/// Pre-norm encoder block: x + Attn(LN1 x), then h + FF(LN2 h).
struct EncoderBlockParams {
  ad::Parameter norm1_gain, norm1_bias;
  ad::Parameter query, key, value;  // d x d, heads are column blocks
  ad::Parameter attn_out, attn_out_bias;
  ad::Parameter norm2_gain, norm2_bias;
  ad::Parameter ff1, ff1_bias, ff2, ff2_bias;

  template <typename F>
  void for_each_parameter(F&& f) {
    for (ad::Parameter* p : {&norm1_gain, &norm1_bias, &query, &key, &value, &attn_out,
                             &attn_out_bias, &norm2_gain, &norm2_bias, &ff1, &ff1_bias, &ff2,
                             &ff2_bias}) {
      f(*p);
    }
  }
};

/// Weights of the Transformer branch for one (source, scale) pair.
struct BranchParams {
  int source = 0;
  int patch_size = 1;
  ArchitectureConfig arch;

  ad::Parameter in_weight;   // P x d
  ad::Parameter in_bias;     // 1 x d
  ad::Parameter mask_token;  // 1 x d
  std::vector<EncoderBlockParams> blocks;
  ad::Parameter head_norm_gain, head_norm_bias;
  ad::Parameter out_weight;  // d x P
  ad::Parameter out_bias;    // 1 x P

  template <typename F>
  void for_each_parameter(F&& f) {
    f(in_weight);
    f(in_bias);
    f(mask_token);
    for (auto& b : blocks) b.for_each_parameter(f);
    f(head_norm_gain);
    f(head_norm_bias);
    f(out_weight);
    f(out_bias);
  }
};

/// Xavier-uniform projections, zero biases, unit norm gains, N(0, 0.02^2) mask token.
BranchParams make_branch(int source, int patch_size, const ArchitectureConfig& arch, Rng& rng);

/// Fixed sinusoidal encodings, n x d.
Matrix positional_encoding(Index n, int d_model);

/// Token matrix (N x d) plus the positions that carry the mask token.
struct TokenSequence {
  ad::Tensor tokens;
  MaskSet mask;
};

/// x_i = u_i W_in + b_in + p_i, with masked rows replaced by mask_token + p_i.
TokenSequence embed_patches(ad::Tensor patches, BranchParams& params, const MaskSet& mask);

/// Attention weights softmax(q k^T / sqrt(d_h) - alpha |i - j| + bias), outside
/// any graph. `bias` may hold -inf entries; an empty bias means all zeros.
Matrix attention_weights(const Matrix& q, const Matrix& k, double alpha, const Matrix& bias = {});

/// Fused, differentiable single-head locality attention returning A v.
ad::Tensor attention_head(ad::Tensor q, ad::Tensor k, ad::Tensor v, ad::Tensor alpha,
                          const Matrix& bias = {});

/// Multi-head locality attention on already-normalized tokens, including the
/// output projection.
ad::Tensor locality_attention(ad::Tensor x, ad::Tensor alpha, EncoderBlockParams& block,
                              const ArchitectureConfig& arch, const Matrix& bias = {});

/// Runs all encoder blocks; shape is preserved.
ad::Tensor encode(ad::Tensor tokens, ad::Tensor alpha, BranchParams& params,
                  const Matrix& bias = {});

/// Masked patch reconstruction error (1 / (|M| P)) sum_{i in M} ||u_hat_i - u_i||^2
/// for a T x 1 trajectory and one fixed mask.
ad::Tensor masked_patch_energy(ad::Tensor trajectory, BranchParams& params, const PatchSpec& spec,
                               ad::Tensor alpha, const MaskSet& mask);

/// Same energy with a freshly sampled mask.
ad::Tensor masked_patch_energy(ad::Tensor trajectory, BranchParams& params, const PatchSpec& spec,
                               ad::Tensor alpha, double mask_ratio, Rng& rng);

/// Branch layout is source-major: index k * R + r.
struct StructuralLoss {
  ad::Tensor total;                    // (1/K) sum_k sum_r pi_{k,r} l_{k,r}
  std::vector<ad::Tensor> per_source;  // sum_r pi_{k,r} l_{k,r}
  std::vector<ad::Tensor> energies;    // l_{k,r}, source-major
};

/// `weights` is K x R, `alpha` is K x 1; `masks` follows the branch layout.
StructuralLoss structural_loss(ad::Tensor sources, ad::Tensor weights, ad::Tensor alpha,
                               std::span<BranchParams> branches, std::span<const PatchSpec> specs,
                               std::span<const MaskSet> masks);

/// Samples one mask per branch, in branch order.
std::vector<MaskSet> sample_masks(Index length, std::span<const PatchSpec> specs, int sources,
                                  double mask_ratio, Rng& rng);

}  // namespace strtf
