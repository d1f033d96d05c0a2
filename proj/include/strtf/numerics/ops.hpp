#pragma once

#include <span>
#include <vector>

#include "strtf/numerics/tensor.hpp"

/// Differentiable primitives. Binary elementwise ops broadcast any operand
/// dimension of extent 1 (scalars, row vectors, column vectors).
namespace strtf::ad {

using Index = Eigen::Index;

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);

Tensor scale(Tensor a, double s);
Tensor add_scalar(Tensor a, double s);
Tensor negate(Tensor a);

inline Tensor operator+(Tensor a, Tensor b) { return add(a, b); }
inline Tensor operator-(Tensor a, Tensor b) { return sub(a, b); }
inline Tensor operator-(Tensor a) { return negate(a); }
inline Tensor operator+(Tensor a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, Tensor a) { return add_scalar(a, s); }
inline Tensor operator-(Tensor a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(double s, Tensor a) { return scale(a, s); }
inline Tensor operator*(Tensor a, double s) { return scale(a, s); }

Tensor matmul(Tensor a, Tensor b);
Tensor transpose(Tensor a);

Tensor exp(Tensor a);
Tensor log(Tensor a);
/// log(1 + e^x), evaluated without overflow.
Tensor softplus(Tensor a);
/// Subgradient 0 at exactly 0 so guarded standard deviations stay finite.
Tensor sqrt(Tensor a);
Tensor square(Tensor a);
Tensor relu(Tensor a);
/// Exact (erf-based) GELU.
Tensor gelu(Tensor a);

Tensor sum(Tensor a);
/// Sum accumulated in ascending order of value: permuting the entries keeps the bits.
Tensor sum_sorted(Tensor a);
Tensor mean(Tensor a);
/// Column sums / means as a 1 x cols row.
Tensor sum_rows(Tensor a);
Tensor mean_rows(Tensor a);

Tensor softmax_rows(Tensor a);
/// Row-wise layer normalization with 1 x cols gain and bias.
Tensor layer_norm_rows(Tensor x, Tensor gain, Tensor bias, double eps = 1e-5);

Tensor slice(Tensor a, Index row, Index col, Index rows, Index cols);
Tensor column(Tensor a, Index col);
Tensor row(Tensor a, Index r);
Tensor gather_rows(Tensor a, std::span<const Index> rows);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);

/// sum((a - b)^2) as a 1x1 tensor.
Tensor squared_error(Tensor a, Tensor b);
Tensor mean_squared_error(Tensor a, Tensor b);
/// sum(a^2) as a 1x1 tensor.
Tensor squared_norm(Tensor a);

}  // namespace strtf::ad
