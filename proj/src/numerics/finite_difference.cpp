#include "strtf/numerics/finite_difference.hpp"

#include <cmath>

#include <fmt/format.h>

namespace strtf {

Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                  double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference_gradient: h must be positive");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe(i);
    probe(i) = orig + h;
    const double up = f(probe);
    probe(i) = orig - h;
    const double down = f(probe);
    probe(i) = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError(fmt::format("finite_difference_gradient: non-finite value at entry {}", i));
    }
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("relative_error: shape mismatch");
  }
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("max_relative_error: shape mismatch");
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), floor});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

}  // namespace strtf
