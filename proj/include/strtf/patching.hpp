#pragma once

#include <stdexcept>
#include <vector>

#include "strtf/numerics/ops.hpp"
#include "strtf/numerics/rng.hpp"

namespace strtf {

/// Raised when a trajectory is shorter than the requested patch size. The
/// model drops such scales instead of padding.
class DegenerateScaleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// max{1, floor(ratio * patch_size + 1/2)}; ratio must lie in (0, 1].
int compute_stride(int patch_size, double stride_ratio);

struct PatchSpec {
  int patch_size = 1;
  int stride = 1;

  static PatchSpec from_ratio(int patch_size, double stride_ratio) {
    return {patch_size, compute_stride(patch_size, stride_ratio)};
  }
};

/// floor((T - P) / q) + 1; throws DegenerateScaleError when T < P.
Index patch_count(Index length, const PatchSpec& spec);

/// Patch rows U (N x P) with the trajectory offset of each row. Samples past
/// the last full patch are not covered.
struct PatchSet {
  Matrix patches;
  std::vector<Index> starts;
};

template <typename Derived>
PatchSet extract_patches(const Eigen::MatrixBase<Derived>& trajectory, const PatchSpec& spec) {
  const Index length = trajectory.size();
  const Index n = patch_count(length, spec);
  PatchSet out;
  out.patches.resize(n, spec.patch_size);
  out.starts.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index start = i * spec.stride;
    out.starts[static_cast<std::size_t>(i)] = start;
    for (Index j = 0; j < spec.patch_size; ++j) out.patches(i, j) = trajectory(start + j);
  }
  return out;
}

/// Differentiable patch gather from a T x 1 column; backward scatter-adds.
ad::Tensor extract_patches(ad::Tensor trajectory, const PatchSpec& spec);

/// Sorted, distinct, zero-based patch indices.
struct MaskSet {
  std::vector<Index> indices;
  double mask_ratio = 0.0;
};

/// max{1, floor(ratio * N + 1/2)}.
Index mask_count(Index patch_count, double mask_ratio);

/// Uniform sample without replacement of `mask_count` patch indices.
MaskSet sample_mask(Index patch_count, double mask_ratio, Rng& rng);

}  // namespace strtf
