#include "strtf/numerics/adam.hpp"

#include <cmath>

#include <fmt/format.h>

namespace strtf {

void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw NumericError(fmt::format("adam_step: invalid learning rate {}", lr));
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const ad::Parameter* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError(fmt::format("adam_step: state tracks {} parameters, got {}",
                                 state.first_moment.size(), params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Parameter& p = *params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
        state.first_moment[i].rows() != p.value.rows() ||
        state.first_moment[i].cols() != p.value.cols()) {
      throw ShapeError(fmt::format("adam_step: shape mismatch for parameter '{}'", p.name));
    }
    if (!p.grad.allFinite()) {
      throw NumericError(fmt::format("adam_step: non-finite gradient for parameter '{}'", p.name));
    }
  }

  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseAbs2();
    if (!p.requires_grad || lr == 0.0) continue;
    p.value.array() -=
        lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.eps);
  }
}

double global_grad_norm(std::span<ad::Parameter* const> params) {
  double total = 0.0;
  for (const ad::Parameter* p : params) total += p->grad.squaredNorm();
  return std::sqrt(total);
}

double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (ad::Parameter* p : params) p->grad *= factor;
  }
  return norm;
}

}  // namespace strtf
