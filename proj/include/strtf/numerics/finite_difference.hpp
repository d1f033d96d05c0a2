#pragma once

#include <functional>

#include "strtf/numerics/tensor.hpp"

namespace strtf {

/// Central-difference gradient of a scalar function. Used as the independent
/// oracle for the autodiff engine.
Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                  double h = 1e-5);

/// ||a - b||_F / max(||a||_F, ||b||_F, floor).
double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-300);

/// max |a - b| / max(|a|, |b|, floor), elementwise.
double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8);

}  // namespace strtf
