#pragma once

#include <optional>
#include <span>

#include "strtf/numerics/ops.hpp"

namespace strtf {

struct ControllerConfig {
  double gap_floor = 1e-3;
  double temperature = 4.0;
  double alpha_min = 0.01;
  double alpha_max = 1.0;
  /// Hinge threshold on neighbouring centers; defaults to
  /// (a_max - a_min) / (2 (K + 1)) when unset.
  std::optional<double> min_center_gap;
  /// Guard inside log() of the entropy penalty.
  double entropy_eps = 1e-8;
};

/// K + 1 unconstrained raw gaps for K sources.
struct ControllerParams {
  ControllerParams() = default;
  ControllerParams(int sources, ControllerConfig config);

  [[nodiscard]] int sources() const { return static_cast<int>(raw_gaps.value.rows()) - 1; }

  ad::Parameter raw_gaps;
  ControllerConfig config;
};

/// Log patch sizes a_r = log P_r. Needs at least two distinct sizes.
Vector log_scales(std::span<const int> patch_sizes);

double resolved_min_center_gap(const ControllerConfig& config, const Vector& log_scales,
                               int sources);

/// Graph-resident controller outputs, all differentiable in the raw gaps.
struct ControllerTensors {
  ad::Tensor u;                   // K x 1, strictly increasing in (0, 1)
  ad::Tensor centers;             // K x 1
  ad::Tensor weights;             // K x R, row-stochastic
  ad::Tensor expected_log_scale;  // K x 1
  ad::Tensor expected_scale;      // K x 1
  ad::Tensor alpha;               // K x 1, strictly decreasing
};

struct ControllerOutput {
  Vector u;
  Vector centers;
  Matrix weights;
  Vector expected_log_scale;
  Vector expected_scale;
  Vector alpha;
};

ControllerTensors compute_controller(ad::Tensor raw_gaps, const Vector& log_scales,
                                     const ControllerConfig& config);

/// Convenience evaluation outside any training graph.
ControllerOutput compute_controller(const Vector& raw_gaps, std::span<const int> patch_sizes,
                                    const ControllerConfig& config);

ControllerOutput controller_values(const ControllerTensors& t);

/// pi_{k,r} proportional to exp(-tau (a_r - c_k)^2). tau = 0 gives uniform rows.
ad::Tensor scale_weights(ad::Tensor centers, const Vector& log_scales, double temperature);

/// -(1/K) sum_k sum_r pi_{k,r} log(pi_{k,r} + eps).
ad::Tensor entropy_penalty(ad::Tensor weights, double eps);

/// (1/(K-1)) sum_k max{0, min_gap - (c_{k+1} - c_k)}^2, and 0 for K = 1.
ad::Tensor gap_penalty(ad::Tensor centers, double min_gap);

}  // namespace strtf
