#include "strtf/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace strtf::ad {
namespace {

Graph& same_graph(Tensor a, Tensor b, std::string_view op) {
  if (&a.graph() != &b.graph()) {
    throw GraphError(fmt::format("{}: operands belong to different graphs", op));
  }
  return a.graph();
}

Index broadcast_dim(Index x, Index y, std::string_view op, Tensor a, Tensor b) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw ShapeError(fmt::format("{}: cannot broadcast {} with {}", op, a.describe(), b.describe()));
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary(std::string_view op, Tensor a, Tensor b, Forward fwd, GradA grad_a, GradB grad_b) {
  Graph& g = same_graph(a, b, op);
  const Index rows = broadcast_dim(a.rows(), b.rows(), op, a, b);
  const Index cols = broadcast_dim(a.cols(), b.cols(), op, a, b);
  const std::size_t ia = a.id(), ib = b.id();
  Matrix av = expand(a.value(), rows, cols);
  Matrix bv = expand(b.value(), rows, cols);
  Matrix out = fwd(av, bv);
  return g.record(op, std::move(out), {ia, ib},
                  [ia, ib, grad_a, grad_b](Graph& gr, const Matrix& dy) {
                    const Matrix& a0 = gr.value(ia);
                    const Matrix& b0 = gr.value(ib);
                    const Index r = dy.rows(), c = dy.cols();
                    if (gr.requires_grad(ia)) {
                      gr.accumulate(ia, reduce_to(grad_a(dy, expand(a0, r, c), expand(b0, r, c)),
                                                  a0.rows(), a0.cols()));
                    }
                    if (gr.requires_grad(ib)) {
                      gr.accumulate(ib, reduce_to(grad_b(dy, expand(a0, r, c), expand(b0, r, c)),
                                                  b0.rows(), b0.cols()));
                    }
                  });
}

template <typename Forward, typename Derivative>
Tensor unary(std::string_view op, Tensor a, Forward fwd, Derivative deriv) {
  const std::size_t ia = a.id();
  Matrix out = fwd(a.value());
  return a.graph().record(op, std::move(out), {ia},
                          [ia, deriv](Graph& gr, const Matrix& dy) {
                            gr.accumulate(ia, deriv(dy, gr.value(ia)));
                          });
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  return binary(
      "add", a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
      [](const Matrix& dy, const Matrix&, const Matrix&) -> Matrix { return dy; },
      [](const Matrix& dy, const Matrix&, const Matrix&) -> Matrix { return dy; });
}

Tensor sub(Tensor a, Tensor b) {
  return binary(
      "sub", a, b, [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
      [](const Matrix& dy, const Matrix&, const Matrix&) -> Matrix { return dy; },
      [](const Matrix& dy, const Matrix&, const Matrix&) -> Matrix { return -dy; });
}

Tensor mul(Tensor a, Tensor b) {
  return binary(
      "mul", a, b,
      [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
      [](const Matrix& dy, const Matrix&, const Matrix& y) -> Matrix {
        return dy.cwiseProduct(y);
      },
      [](const Matrix& dy, const Matrix& x, const Matrix&) -> Matrix {
        return dy.cwiseProduct(x);
      });
}

Tensor div(Tensor a, Tensor b) {
  return binary(
      "div", a, b,
      [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseQuotient(y); },
      [](const Matrix& dy, const Matrix&, const Matrix& y) -> Matrix {
        return dy.cwiseQuotient(y);
      },
      [](const Matrix& dy, const Matrix& x, const Matrix& y) -> Matrix {
        return -(dy.array() * x.array() / y.array().square()).matrix();
      });
}

Tensor scale(Tensor a, double s) {
  return unary(
      "scale", a, [s](const Matrix& x) -> Matrix { return s * x; },
      [s](const Matrix& dy, const Matrix&) -> Matrix { return s * dy; });
}

Tensor add_scalar(Tensor a, double s) {
  return unary(
      "add_scalar", a, [s](const Matrix& x) -> Matrix { return x.array() + s; },
      [](const Matrix& dy, const Matrix&) -> Matrix { return dy; });
}

Tensor negate(Tensor a) { return scale(a, -1.0); }

Tensor matmul(Tensor a, Tensor b) {
  Graph& g = same_graph(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError(
        fmt::format("matmul: {} incompatible with {}", a.describe(), b.describe()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return g.record("matmul", std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Matrix& dy) {
    if (gr.requires_grad(ia)) gr.accumulate(ia, dy * gr.value(ib).transpose());
    if (gr.requires_grad(ib)) gr.accumulate(ib, gr.value(ia).transpose() * dy);
  });
}

Tensor transpose(Tensor a) {
  return unary(
      "transpose", a, [](const Matrix& x) -> Matrix { return x.transpose(); },
      [](const Matrix& dy, const Matrix&) -> Matrix { return dy.transpose(); });
}

Tensor exp(Tensor a) {
  const std::size_t ia = a.id();
  Matrix out = a.value().array().exp();
  const std::size_t self = a.graph().size();
  return a.graph().record("exp", std::move(out), {ia}, [ia, self](Graph& gr, const Matrix& dy) {
    gr.accumulate(ia, dy.cwiseProduct(gr.value(self)));
  });
}

Tensor log(Tensor a) {
  if ((a.value().array() <= 0.0).any()) {
    throw NumericError(fmt::format("log: non-positive input at {}", a.describe()));
  }
  return unary(
      "log", a, [](const Matrix& x) -> Matrix { return x.array().log(); },
      [](const Matrix& dy, const Matrix& x) -> Matrix { return dy.cwiseQuotient(x); });
}

Tensor softplus(Tensor a) {
  return unary(
      "softplus", a,
      [](const Matrix& x) -> Matrix {
        return x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
      },
      [](const Matrix& dy, const Matrix& x) -> Matrix {
        Matrix sig = x.unaryExpr([](double v) {
          return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
        return dy.cwiseProduct(sig);
      });
}

Tensor sqrt(Tensor a) {
  if ((a.value().array() < 0.0).any()) {
    throw NumericError(fmt::format("sqrt: negative input at {}", a.describe()));
  }
  const std::size_t ia = a.id();
  Matrix out = a.value().cwiseSqrt();
  const std::size_t self = a.graph().size();
  return a.graph().record("sqrt", std::move(out), {ia}, [ia, self](Graph& gr, const Matrix& dy) {
    const Matrix& y = gr.value(self);
    Matrix g = dy.binaryExpr(y, [](double d, double r) { return r > 0.0 ? 0.5 * d / r : 0.0; });
    gr.accumulate(ia, g);
  });
}

Tensor square(Tensor a) {
  return unary(
      "square", a, [](const Matrix& x) -> Matrix { return x.array().square(); },
      [](const Matrix& dy, const Matrix& x) -> Matrix { return 2.0 * dy.cwiseProduct(x); });
}

Tensor relu(Tensor a) {
  return unary(
      "relu", a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
      [](const Matrix& dy, const Matrix& x) -> Matrix {
        return (x.array() > 0.0).select(dy, 0.0);
      });
}

Tensor gelu(Tensor a) {
  return unary(
      "gelu", a,
      [](const Matrix& x) -> Matrix {
        return x.unaryExpr(
            [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
      },
      [](const Matrix& dy, const Matrix& x) -> Matrix {
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
          const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
          return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
        return dy.cwiseProduct(d);
      });
}

Tensor sum(Tensor a) {
  return unary(
      "sum", a, [](const Matrix& x) -> Matrix { return Matrix::Constant(1, 1, x.sum()); },
      [](const Matrix& dy, const Matrix& x) -> Matrix {
        return Matrix::Constant(x.rows(), x.cols(), dy(0, 0));
      });
}

Tensor sum_sorted(Tensor a) {
  return unary(
      "sum_sorted", a,
      [](const Matrix& x) -> Matrix {
        std::vector<double> v(x.data(), x.data() + x.size());
        std::sort(v.begin(), v.end());
        double total = 0.0;
        for (double e : v) total += e;
        return Matrix::Constant(1, 1, total);
      },
      [](const Matrix& dy, const Matrix& x) -> Matrix {
        return Matrix::Constant(x.rows(), x.cols(), dy(0, 0));
      });
}

Tensor mean(Tensor a) {
  const double n = static_cast<double>(a.value().size());
  return unary(
      "mean", a, [n](const Matrix& x) -> Matrix { return Matrix::Constant(1, 1, x.sum() / n); },
      [n](const Matrix& dy, const Matrix& x) -> Matrix {
        return Matrix::Constant(x.rows(), x.cols(), dy(0, 0) / n);
      });
}

Tensor sum_rows(Tensor a) {
  return unary(
      "sum_rows", a, [](const Matrix& x) -> Matrix { return x.colwise().sum(); },
      [](const Matrix& dy, const Matrix& x) -> Matrix { return dy.replicate(x.rows(), 1); });
}

Tensor mean_rows(Tensor a) {
  const double n = static_cast<double>(a.rows());
  return unary(
      "mean_rows", a, [n](const Matrix& x) -> Matrix { return x.colwise().sum() / n; },
      [n](const Matrix& dy, const Matrix& x) -> Matrix {
        return dy.replicate(x.rows(), 1) / n;
      });
}

Tensor softmax_rows(Tensor a) {
  const std::size_t ia = a.id();
  const Matrix& x = a.value();
  Matrix out = (x.colwise() - x.rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  const std::size_t self = a.graph().size();
  return a.graph().record("softmax_rows", std::move(out), {ia},
                          [ia, self](Graph& gr, const Matrix& dy) {
                            const Matrix& y = gr.value(self);
                            Matrix inner = dy.cwiseProduct(y).rowwise().sum();
                            Matrix dx = y.array() * (dy.colwise() - inner.col(0)).array();
                            gr.accumulate(ia, dx);
                          });
}

Tensor layer_norm_rows(Tensor x, Tensor gain, Tensor bias, double eps) {
  Graph& g = same_graph(x, gain, "layer_norm_rows");
  same_graph(x, bias, "layer_norm_rows");
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeError(fmt::format("layer_norm_rows: gain {} / bias {} do not match {}",
                                 gain.describe(), bias.describe(), x.describe()));
  }
  const Matrix& xv = x.value();
  Vector mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Vector inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt();
  auto xhat = std::make_shared<Matrix>(centered.array().colwise() * inv_std.array());
  Matrix out = (xhat->array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.record(
      "layer_norm_rows", std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat, inv_std, d](Graph& gr, const Matrix& dy) {
        if (gr.requires_grad(ig)) gr.accumulate(ig, dy.cwiseProduct(*xhat).colwise().sum());
        if (gr.requires_grad(ib)) gr.accumulate(ib, dy.colwise().sum());
        if (gr.requires_grad(ix)) {
          Matrix dxhat = dy.array().rowwise() * gr.value(ig).row(0).array();
          Vector m1 = dxhat.rowwise().mean();
          Vector m2 = dxhat.cwiseProduct(*xhat).rowwise().mean();
          Matrix dx = (dxhat.colwise() - m1) - (xhat->array().colwise() * m2.array()).matrix();
          dx.array().colwise() *= inv_std.array();
          gr.accumulate(ix, dx);
        }
        (void)d;
      });
}

Tensor slice(Tensor a, Index row0, Index col0, Index rows, Index cols) {
  if (row0 < 0 || col0 < 0 || rows < 0 || cols < 0 || row0 + rows > a.rows() ||
      col0 + cols > a.cols()) {
    throw ShapeError(fmt::format("slice: block ({},{})+{}x{} outside {}", row0, col0, rows, cols,
                                 a.describe()));
  }
  const std::size_t ia = a.id();
  const Index in_rows = a.rows(), in_cols = a.cols();
  Matrix out = a.value().block(row0, col0, rows, cols);
  return a.graph().record("slice", std::move(out), {ia},
                          [=](Graph& gr, const Matrix& dy) {
                            Matrix g = Matrix::Zero(in_rows, in_cols);
                            g.block(row0, col0, rows, cols) = dy;
                            gr.accumulate(ia, g);
                          });
}

Tensor column(Tensor a, Index col) { return slice(a, 0, col, a.rows(), 1); }
Tensor row(Tensor a, Index r) { return slice(a, r, 0, 1, a.cols()); }

Tensor gather_rows(Tensor a, std::span<const Index> rows) {
  std::vector<Index> idx(rows.begin(), rows.end());
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(idx.size()), av.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= av.rows()) {
      throw ShapeError(
          fmt::format("gather_rows: index {} out of range for {}", idx[i], a.describe()));
    }
    out.row(static_cast<Index>(i)) = av.row(idx[i]);
  }
  const std::size_t ia = a.id();
  const Index in_rows = av.rows(), in_cols = av.cols();
  return a.graph().record("gather_rows", std::move(out), {ia},
                          [ia, idx = std::move(idx), in_rows, in_cols](Graph& gr,
                                                                       const Matrix& dy) {
                            Matrix g = Matrix::Zero(in_rows, in_cols);
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              g.row(idx[i]) += dy.row(static_cast<Index>(i));
                            }
                            gr.accumulate(ia, g);
                          });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Graph& g = parts.front().graph();
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> widths;
  for (const Tensor& p : parts) {
    same_graph(parts.front(), p, "concat_cols");
    if (p.rows() != rows) {
      throw ShapeError(fmt::format("concat_cols: {} has {} rows, expected {}", p.describe(),
                                   p.rows(), rows));
    }
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return g.record("concat_cols", std::move(out), ids,
                  [ids, widths](Graph& gr, const Matrix& dy) {
                    Index off = 0;
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (gr.requires_grad(ids[i])) {
                        gr.accumulate(ids[i], Matrix(dy.middleCols(off, widths[i])));
                      }
                      off += widths[i];
                    }
                  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  Graph& g = parts.front().graph();
  const Index cols = parts.front().cols();
  Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Index> heights;
  for (const Tensor& p : parts) {
    same_graph(parts.front(), p, "concat_rows");
    if (p.cols() != cols) {
      throw ShapeError(fmt::format("concat_rows: {} has {} cols, expected {}", p.describe(),
                                   p.cols(), cols));
    }
    ids.push_back(p.id());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Tensor& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return g.record("concat_rows", std::move(out), ids,
                  [ids, heights](Graph& gr, const Matrix& dy) {
                    Index off = 0;
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      if (gr.requires_grad(ids[i])) {
                        gr.accumulate(ids[i], Matrix(dy.middleRows(off, heights[i])));
                      }
                      off += heights[i];
                    }
                  });
}

Tensor squared_error(Tensor a, Tensor b) {
  Graph& g = same_graph(a, b, "squared_error");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(
        fmt::format("squared_error: {} vs {}", a.describe(), b.describe()));
  }
  auto diff = std::make_shared<Matrix>(a.value() - b.value());
  Matrix out = Matrix::Constant(1, 1, diff->squaredNorm());
  const std::size_t ia = a.id(), ib = b.id();
  return g.record("squared_error", std::move(out), {ia, ib},
                  [ia, ib, diff](Graph& gr, const Matrix& dy) {
                    const double s = 2.0 * dy(0, 0);
                    if (gr.requires_grad(ia)) gr.accumulate(ia, s * *diff);
                    if (gr.requires_grad(ib)) gr.accumulate(ib, -s * *diff);
                  });
}

Tensor mean_squared_error(Tensor a, Tensor b) {
  return scale(squared_error(a, b), 1.0 / static_cast<double>(a.value().size()));
}

Tensor squared_norm(Tensor a) {
  return unary(
      "squared_norm", a,
      [](const Matrix& x) -> Matrix { return Matrix::Constant(1, 1, x.squaredNorm()); },
      [](const Matrix& dy, const Matrix& x) -> Matrix { return 2.0 * dy(0, 0) * x; });
}

}  // namespace strtf::ad
