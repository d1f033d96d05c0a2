#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "strtf/numerics/tensor.hpp"

namespace strtf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers are kept in the order the parameters are passed to
/// `adam_step`; the order must not change between steps.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update using each parameter's accumulated `grad`.
/// Throws ShapeError on moment/parameter mismatch and NumericError on a
/// non-finite gradient (before touching any parameter).
void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr);

/// Global L2 norm over all gradients.
double global_grad_norm(std::span<ad::Parameter* const> params);

/// Rescales every gradient so the global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm);

}  // namespace strtf
