#include "strtf/strformer.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include <fmt/format.h>

namespace strtf {
namespace {

ad::Parameter xavier(std::string name, Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return {std::move(name), rng.uniform_matrix(fan_in, fan_out, -bound, bound)};
}

ad::Parameter zeros(std::string name, Index rows, Index cols) {
  return {std::move(name), Matrix::Zero(rows, cols)};
}

ad::Parameter ones(std::string name, Index rows, Index cols) {
  return {std::move(name), Matrix::Ones(rows, cols)};
}

// |i - j| for an n x n token grid, shared across calls.
std::shared_ptr<const Matrix> distance_matrix(Index n) {
  static std::mutex mutex;
  static std::map<Index, std::shared_ptr<const Matrix>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) {
    auto d = std::make_shared<Matrix>(n, n);
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) (*d)(i, j) = static_cast<double>(std::abs(i - j));
    }
    slot = std::move(d);
  }
  return slot;
}

void check_bias(const Matrix& bias, Index n) {
  if (bias.size() == 0) return;
  if (bias.rows() != n || bias.cols() != n) {
    throw ShapeError(fmt::format("attention bias {} does not match {} tokens",
                                 ad::shape_string(bias), n));
  }
  for (Index i = 0; i < bias.size(); ++i) {
    const double b = bias(i);
    if (!(b == 0.0 || b == -std::numeric_limits<double>::infinity())) {
      throw NumericError("attention bias entries must be 0 or -inf");
    }
  }
}

// Transposed attention weights: column i is the distribution of query i.
Matrix attention_weights_t(const Matrix& q, const Matrix& k, double alpha, const Matrix& bias,
                           const Matrix& distance) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix lt(k.rows(), q.rows());
  lt.noalias() = k * q.transpose();
  lt *= inv_sqrt;
  if (!lt.allFinite() || !std::isfinite(alpha)) {
    throw NumericError("non-finite attention logits");
  }
  lt.noalias() -= alpha * distance;
  if (bias.size() != 0) lt += bias.transpose();
  const Eigen::RowVectorXd col_max = lt.colwise().maxCoeff();
  if (!col_max.allFinite()) throw NumericError("attention row has no valid key (all -inf)");
  lt.rowwise() -= col_max;
  lt = lt.array().exp();
  // Vectorized exp clamps -inf to a subnormal rather than 0.
  if (bias.size() != 0) lt = (bias.transpose().array() == 0.0).select(lt, 0.0);
  const Eigen::RowVectorXd col_sum = lt.colwise().sum();
  lt.array().rowwise() /= col_sum.array();
  return lt;
}

}  // namespace

BranchParams make_branch(int source, int patch_size, const ArchitectureConfig& arch, Rng& rng) {
  if (arch.d_model % arch.heads != 0) {
    throw std::invalid_argument(
        fmt::format("d_model {} is not divisible by {} heads", arch.d_model, arch.heads));
  }
  const Index d = arch.d_model;
  const Index p = patch_size;
  const std::string prefix = fmt::format("branch[{}][P={}]", source, patch_size);
  BranchParams b;
  b.source = source;
  b.patch_size = patch_size;
  b.arch = arch;
  b.in_weight = xavier(prefix + ".in_weight", p, d, rng);
  b.in_bias = zeros(prefix + ".in_bias", 1, d);
  b.mask_token = {prefix + ".mask_token", rng.normal_matrix(1, d, 0.02)};
  for (int l = 0; l < arch.layers; ++l) {
    const std::string bp = fmt::format("{}.block{}", prefix, l);
    EncoderBlockParams blk;
    blk.norm1_gain = ones(bp + ".norm1_gain", 1, d);
    blk.norm1_bias = zeros(bp + ".norm1_bias", 1, d);
    blk.query = xavier(bp + ".query", d, d, rng);
    blk.key = xavier(bp + ".key", d, d, rng);
    blk.value = xavier(bp + ".value", d, d, rng);
    blk.attn_out = xavier(bp + ".attn_out", d, d, rng);
    blk.attn_out_bias = zeros(bp + ".attn_out_bias", 1, d);
    blk.norm2_gain = ones(bp + ".norm2_gain", 1, d);
    blk.norm2_bias = zeros(bp + ".norm2_bias", 1, d);
    blk.ff1 = xavier(bp + ".ff1", d, arch.ff_width, rng);
    blk.ff1_bias = zeros(bp + ".ff1_bias", 1, arch.ff_width);
    blk.ff2 = xavier(bp + ".ff2", arch.ff_width, d, rng);
    blk.ff2_bias = zeros(bp + ".ff2_bias", 1, d);
    b.blocks.push_back(std::move(blk));
  }
  b.head_norm_gain = ones(prefix + ".head_norm_gain", 1, d);
  b.head_norm_bias = zeros(prefix + ".head_norm_bias", 1, d);
  b.out_weight = xavier(prefix + ".out_weight", d, p, rng);
  b.out_bias = zeros(prefix + ".out_bias", 1, p);
  return b;
}

Matrix positional_encoding(Index n, int d_model) {
  Matrix pe(n, d_model);
  for (Index i = 0; i < n; ++i) {
    for (int j = 0; j < d_model; ++j) {
      const int pair = j / 2;
      const double freq = std::pow(10000.0, -2.0 * pair / static_cast<double>(d_model));
      const double angle = static_cast<double>(i) * freq;
      pe(i, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

TokenSequence embed_patches(ad::Tensor patches, BranchParams& params, const MaskSet& mask) {
  ad::Graph& g = patches.graph();
  const Index n = patches.rows();
  if (patches.cols() != params.in_weight.value.rows()) {
    throw ShapeError(fmt::format("embed_patches: patch width {} does not match W_in {}",
                                 patches.cols(), ad::shape_string(params.in_weight.value)));
  }
  for (Index i : mask.indices) {
    if (i < 0 || i >= n) {
      throw std::out_of_range(fmt::format("embed_patches: mask index {} outside [0, {})", i, n));
    }
  }
  ad::Tensor x = ad::matmul(patches, g.leaf(params.in_weight)) + g.leaf(params.in_bias);

  ad::Tensor token = g.leaf(params.mask_token);
  std::vector<Index> rows = mask.indices;
  Matrix replaced = x.value();
  for (Index i : rows) replaced.row(i) = token.value().row(0);
  const std::size_t ix = x.id(), it = token.id();
  ad::Tensor masked = g.record("mask_tokens", std::move(replaced), {ix, it},
                               [ix, it, rows](ad::Graph& gr, const Matrix& dy) {
                                 if (gr.requires_grad(ix)) {
                                   Matrix dx = dy;
                                   for (Index i : rows) dx.row(i).setZero();
                                   gr.accumulate(ix, dx);
                                 }
                                 if (gr.requires_grad(it)) {
                                   Matrix dt = Matrix::Zero(1, dy.cols());
                                   for (Index i : rows) dt += dy.row(i);
                                   gr.accumulate(it, dt);
                                 }
                               });
  ad::Tensor pos = g.constant(positional_encoding(n, params.arch.d_model), "positional_encoding");
  return {masked + pos, mask};
}

Matrix attention_weights(const Matrix& q, const Matrix& k, double alpha, const Matrix& bias) {
  if (q.cols() != k.cols() || q.rows() != k.rows()) {
    throw ShapeError("attention_weights: query/key shape mismatch");
  }
  check_bias(bias, q.rows());
  return attention_weights_t(q, k, alpha, bias, *distance_matrix(q.rows())).transpose();
}

ad::Tensor attention_head(ad::Tensor q, ad::Tensor k, ad::Tensor v, ad::Tensor alpha,
                          const Matrix& bias) {
  ad::Graph& g = q.graph();
  const Index n = q.rows();
  if (k.rows() != n || v.rows() != n || k.cols() != q.cols()) {
    throw ShapeError(fmt::format("attention_head: q {} / k {} / v {} mismatch", q.describe(),
                                 k.describe(), v.describe()));
  }
  if (alpha.rows() != 1 || alpha.cols() != 1) {
    throw ShapeError(fmt::format("attention_head: alpha must be 1x1, got {}", alpha.describe()));
  }
  check_bias(bias, n);
  auto distance = distance_matrix(n);
  auto weights_t = std::make_shared<Matrix>(
      attention_weights_t(q.value(), k.value(), alpha.scalar(), bias, *distance));
  Matrix out = weights_t->transpose() * v.value();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id(), ia = alpha.id();
  return g.record(
      "locality_attention", std::move(out), {iq, ik, iv, ia},
      [=](ad::Graph& gr, const Matrix& dy) {
        const Matrix& at = *weights_t;
        if (gr.requires_grad(iv)) gr.accumulate(iv, at * dy);
        if (!(gr.requires_grad(iq) || gr.requires_grad(ik) || gr.requires_grad(ia))) return;
        Matrix dlt(at.rows(), at.cols());
        dlt.noalias() = gr.value(iv) * dy.transpose();  // dA^T
        const Eigen::RowVectorXd inner = dlt.cwiseProduct(at).colwise().sum();
        dlt.rowwise() -= inner;
        dlt.array() *= at.array();
        if (gr.requires_grad(iq)) gr.accumulate(iq, inv_sqrt * (dlt.transpose() * gr.value(ik)));
        if (gr.requires_grad(ik)) gr.accumulate(ik, inv_sqrt * (dlt * gr.value(iq)));
        if (gr.requires_grad(ia)) {
          gr.accumulate(ia, Matrix::Constant(1, 1, -dlt.cwiseProduct(*distance).sum()));
        }
      });
}

ad::Tensor locality_attention(ad::Tensor x, ad::Tensor alpha, EncoderBlockParams& block,
                              const ArchitectureConfig& arch, const Matrix& bias) {
  ad::Graph& g = x.graph();
  if (!(alpha.scalar() >= 0.0)) {
    throw NumericError(fmt::format("locality slope must be nonnegative, got {}", alpha.scalar()));
  }
  ad::Tensor q = ad::matmul(x, g.leaf(block.query));
  ad::Tensor k = ad::matmul(x, g.leaf(block.key));
  ad::Tensor v = ad::matmul(x, g.leaf(block.value));
  const Index n = x.rows();
  const int dh = arch.head_dim();
  std::vector<ad::Tensor> heads;
  heads.reserve(static_cast<std::size_t>(arch.heads));
  for (int h = 0; h < arch.heads; ++h) {
    heads.push_back(attention_head(ad::slice(q, 0, h * dh, n, dh), ad::slice(k, 0, h * dh, n, dh),
                                   ad::slice(v, 0, h * dh, n, dh), alpha, bias));
  }
  ad::Tensor merged = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  return ad::matmul(merged, g.leaf(block.attn_out)) + g.leaf(block.attn_out_bias);
}

ad::Tensor encode(ad::Tensor tokens, ad::Tensor alpha, BranchParams& params, const Matrix& bias) {
  ad::Graph& g = tokens.graph();
  const double eps = params.arch.layer_norm_eps;
  ad::Tensor x = tokens;
  for (auto& blk : params.blocks) {
    ad::Tensor normed = ad::layer_norm_rows(x, g.leaf(blk.norm1_gain), g.leaf(blk.norm1_bias), eps);
    x = x + locality_attention(normed, alpha, blk, params.arch, bias);
    ad::Tensor normed2 = ad::layer_norm_rows(x, g.leaf(blk.norm2_gain), g.leaf(blk.norm2_bias), eps);
    ad::Tensor hidden = ad::gelu(ad::matmul(normed2, g.leaf(blk.ff1)) + g.leaf(blk.ff1_bias));
    x = x + (ad::matmul(hidden, g.leaf(blk.ff2)) + g.leaf(blk.ff2_bias));
  }
  return x;
}

ad::Tensor masked_patch_energy(ad::Tensor trajectory, BranchParams& params, const PatchSpec& spec,
                               ad::Tensor alpha, const MaskSet& mask) {
  ad::Graph& g = trajectory.graph();
  if (spec.patch_size != params.patch_size) {
    throw ShapeError(fmt::format("masked_patch_energy: spec patch size {} vs branch {}",
                                 spec.patch_size, params.patch_size));
  }
  if (mask.indices.empty()) throw std::invalid_argument("masked_patch_energy: empty mask");
  ad::Tensor patches = extract_patches(trajectory, spec);
  TokenSequence seq = embed_patches(patches, params, mask);
  ad::Tensor hidden = encode(seq.tokens, alpha, params);
  ad::Tensor picked = ad::gather_rows(hidden, mask.indices);
  ad::Tensor normed = ad::layer_norm_rows(picked, g.leaf(params.head_norm_gain),
                                          g.leaf(params.head_norm_bias), params.arch.layer_norm_eps);
  ad::Tensor predicted = ad::matmul(normed, g.leaf(params.out_weight)) + g.leaf(params.out_bias);
  ad::Tensor target = ad::gather_rows(patches, mask.indices);
  const double norm = static_cast<double>(mask.indices.size()) * spec.patch_size;
  return ad::scale(ad::squared_error(predicted, target), 1.0 / norm);
}

ad::Tensor masked_patch_energy(ad::Tensor trajectory, BranchParams& params, const PatchSpec& spec,
                               ad::Tensor alpha, double mask_ratio, Rng& rng) {
  const MaskSet mask = sample_mask(patch_count(trajectory.rows(), spec), mask_ratio, rng);
  return masked_patch_energy(trajectory, params, spec, alpha, mask);
}

std::vector<MaskSet> sample_masks(Index length, std::span<const PatchSpec> specs, int sources,
                                  double mask_ratio, Rng& rng) {
  std::vector<MaskSet> masks;
  masks.reserve(specs.size() * static_cast<std::size_t>(sources));
  for (int k = 0; k < sources; ++k) {
    for (const PatchSpec& spec : specs) {
      masks.push_back(sample_mask(patch_count(length, spec), mask_ratio, rng));
    }
  }
  return masks;
}

StructuralLoss structural_loss(ad::Tensor sources, ad::Tensor weights, ad::Tensor alpha,
                               std::span<BranchParams> branches, std::span<const PatchSpec> specs,
                               std::span<const MaskSet> masks) {
  const Index k_count = sources.cols();
  const auto r_count = static_cast<Index>(specs.size());
  const auto expected = static_cast<std::size_t>(k_count * r_count);
  if (weights.rows() != k_count || weights.cols() != r_count || alpha.rows() != k_count ||
      alpha.cols() != 1) {
    throw ShapeError(fmt::format("structural_loss: weights {} / alpha {} inconsistent with {} "
                                 "sources and {} scales",
                                 weights.describe(), alpha.describe(), k_count, r_count));
  }
  if (branches.size() != expected || masks.size() != expected) {
    throw ShapeError(fmt::format("structural_loss: expected {} branches and masks, got {} and {}",
                                 expected, branches.size(), masks.size()));
  }
  StructuralLoss out;
  std::vector<ad::Tensor> source_terms;
  for (Index k = 0; k < k_count; ++k) {
    ad::Tensor col = ad::column(sources, k);
    ad::Tensor slope = ad::slice(alpha, k, 0, 1, 1);
    ad::Tensor branch_sum;
    for (Index r = 0; r < r_count; ++r) {
      const auto b = static_cast<std::size_t>(k * r_count + r);
      ad::Tensor energy = masked_patch_energy(col, branches[b], specs[static_cast<std::size_t>(r)],
                                              slope, masks[b]);
      out.energies.push_back(energy);
      ad::Tensor term = ad::mul(ad::slice(weights, k, r, 1, 1), energy);
      branch_sum = branch_sum.valid() ? branch_sum + term : term;
    }
    out.per_source.push_back(branch_sum);
  }
  out.total = ad::scale(ad::sum_sorted(ad::concat_rows(out.per_source)),
                        1.0 / static_cast<double>(k_count));
  return out;
}

}  // namespace strtf
