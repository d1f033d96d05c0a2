#include "strtf/patching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace strtf {

int compute_stride(int patch_size, double stride_ratio) {
  if (patch_size < 1) throw std::invalid_argument("compute_stride: patch size must be >= 1");
  if (!(stride_ratio > 0.0 && stride_ratio <= 1.0)) {
    throw std::invalid_argument(
        fmt::format("compute_stride: stride ratio {} outside (0, 1]", stride_ratio));
  }
  const auto q = static_cast<int>(std::floor(stride_ratio * patch_size + 0.5));
  return std::max(1, q);
}

Index patch_count(Index length, const PatchSpec& spec) {
  if (spec.patch_size < 1 || spec.stride < 1) {
    throw std::invalid_argument("patch_count: patch size and stride must be positive");
  }
  if (length < spec.patch_size) {
    throw DegenerateScaleError(fmt::format(
        "patch size {} exceeds trajectory length {}", spec.patch_size, length));
  }
  return (length - spec.patch_size) / spec.stride + 1;
}

ad::Tensor extract_patches(ad::Tensor trajectory, const PatchSpec& spec) {
  if (trajectory.cols() != 1) {
    throw ShapeError(fmt::format("extract_patches: expected a column, got {}",
                                 trajectory.describe()));
  }
  const Index length = trajectory.rows();
  const Index n = patch_count(length, spec);
  const Index p = spec.patch_size;
  const Index q = spec.stride;
  const Matrix& s = trajectory.value();
  Matrix out(n, p);
  for (Index i = 0; i < n; ++i) out.row(i) = s.col(0).segment(i * q, p).transpose();
  const std::size_t id = trajectory.id();
  return trajectory.graph().record(
      "extract_patches", std::move(out), {id}, [id, n, p, q, length](ad::Graph& g, const Matrix& dy) {
        Matrix ds = Matrix::Zero(length, 1);
        for (Index i = 0; i < n; ++i) ds.col(0).segment(i * q, p) += dy.row(i).transpose();
        g.accumulate(id, ds);
      });
}

Index mask_count(Index patch_count, double mask_ratio) {
  if (patch_count < 1) throw std::invalid_argument("mask_count: need at least one patch");
  const auto m = static_cast<Index>(std::floor(mask_ratio * static_cast<double>(patch_count) + 0.5));
  return std::clamp<Index>(m, 1, patch_count);
}

MaskSet sample_mask(Index patch_count, double mask_ratio, Rng& rng) {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
    throw std::invalid_argument(fmt::format("sample_mask: mask ratio {} outside [0, 1]", mask_ratio));
  }
  const Index m = mask_count(patch_count, mask_ratio);
  std::vector<Index> pool(static_cast<std::size_t>(patch_count));
  std::iota(pool.begin(), pool.end(), Index{0});
  // Partial Fisher-Yates: the first m slots become the sample.
  for (Index i = 0; i < m; ++i) {
    const auto remaining = static_cast<std::uint64_t>(patch_count - i);
    const auto j = i + static_cast<Index>(rng.uniform_index(remaining));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  MaskSet mask;
  mask.mask_ratio = mask_ratio;
  mask.indices.assign(pool.begin(), pool.begin() + m);
  std::sort(mask.indices.begin(), mask.indices.end());
  return mask;
}

}  // namespace strtf
