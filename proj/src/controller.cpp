#include "strtf/controller.hpp"

#include <cmath>

#include <fmt/format.h>

namespace strtf {

ControllerParams::ControllerParams(int sources, ControllerConfig cfg)
    : raw_gaps("controller.raw_gaps", Matrix::Zero(sources + 1, 1)), config(cfg) {
  if (sources < 1) throw std::invalid_argument("controller needs at least one source");
}

Vector log_scales(std::span<const int> patch_sizes) {
  if (patch_sizes.size() < 2) {
    throw std::invalid_argument("controller needs at least two patch sizes (a_min == a_max)");
  }
  Vector a(static_cast<Index>(patch_sizes.size()));
  for (std::size_t r = 0; r < patch_sizes.size(); ++r) {
    if (patch_sizes[r] < 1) throw std::invalid_argument("patch sizes must be positive");
    a(static_cast<Index>(r)) = std::log(static_cast<double>(patch_sizes[r]));
  }
  if (a.maxCoeff() == a.minCoeff()) {
    throw std::invalid_argument("controller needs distinct patch sizes (a_min == a_max)");
  }
  return a;
}

double resolved_min_center_gap(const ControllerConfig& config, const Vector& a, int sources) {
  if (config.min_center_gap) return *config.min_center_gap;
  return (a.maxCoeff() - a.minCoeff()) / (2.0 * (sources + 1));
}

ad::Tensor scale_weights(ad::Tensor centers, const Vector& a, double temperature) {
  ad::Graph& g = centers.graph();
  ad::Tensor a_row = g.constant(a.transpose(), "log_scales");
  ad::Tensor diff = a_row - centers;  // K x R
  return ad::softmax_rows(ad::scale(ad::square(diff), -temperature));
}

ad::Tensor entropy_penalty(ad::Tensor weights, double eps) {
  const double k = static_cast<double>(weights.rows());
  return ad::scale(ad::sum(ad::mul(weights, ad::log(weights + eps))), -1.0 / k);
}

ad::Tensor gap_penalty(ad::Tensor centers, double min_gap) {
  const Index k = centers.rows();
  if (k == 1) return centers.graph().constant(0.0, "gap_penalty");
  ad::Tensor upper = ad::slice(centers, 1, 0, k - 1, 1);
  ad::Tensor lower = ad::slice(centers, 0, 0, k - 1, 1);
  ad::Tensor hinge = ad::relu(ad::add_scalar(ad::negate(upper - lower), min_gap));
  return ad::scale(ad::squared_norm(hinge), 1.0 / static_cast<double>(k - 1));
}

ControllerTensors compute_controller(ad::Tensor raw_gaps, const Vector& a,
                                     const ControllerConfig& config) {
  if (raw_gaps.cols() != 1 || raw_gaps.rows() < 2) {
    throw ShapeError(fmt::format("compute_controller: raw gaps must be (K+1) x 1, got {}",
                                 raw_gaps.describe()));
  }
  if (!(config.alpha_min > 0.0 && config.alpha_min < config.alpha_max)) {
    throw std::invalid_argument("compute_controller: need 0 < alpha_min < alpha_max");
  }
  if (!(config.gap_floor > 0.0)) throw std::invalid_argument("compute_controller: gap floor must be positive");
  ad::Graph& g = raw_gaps.graph();
  const Index k = raw_gaps.rows() - 1;
  const double a_min = a.minCoeff();
  const double a_max = a.maxCoeff();

  ad::Tensor delta = ad::softplus(raw_gaps) + config.gap_floor;
  // Row k sums delta_0 .. delta_k.
  Matrix cumulative = Matrix::Zero(k, k + 1);
  for (Index i = 0; i < k; ++i) cumulative.row(i).head(i + 1).setOnes();
  ad::Tensor numer = ad::matmul(g.constant(cumulative, "cumulative_sum"), delta);

  ControllerTensors out;
  out.u = ad::div(numer, ad::sum(delta));
  out.centers = ad::scale(out.u, a_max - a_min) + a_min;
  out.weights = scale_weights(out.centers, a, config.temperature);
  out.expected_log_scale = ad::matmul(out.weights, g.constant(Matrix(a), "log_scales"));
  out.expected_scale = ad::exp(out.expected_log_scale);
  const double log_hi = std::log(config.alpha_max);
  const double log_lo = std::log(config.alpha_min);
  out.alpha = ad::exp(ad::scale(out.u, log_lo - log_hi) + log_hi);
  return out;
}

ControllerOutput controller_values(const ControllerTensors& t) {
  return {t.u.value().col(0),           t.centers.value().col(0),
          t.weights.value(),            t.expected_log_scale.value().col(0),
          t.expected_scale.value().col(0), t.alpha.value().col(0)};
}

ControllerOutput compute_controller(const Vector& raw_gaps, std::span<const int> patch_sizes,
                                    const ControllerConfig& config) {
  ad::Graph g;
  return controller_values(
      compute_controller(g.constant(Matrix(raw_gaps), "raw_gaps"), log_scales(patch_sizes), config));
}

}  // namespace strtf
