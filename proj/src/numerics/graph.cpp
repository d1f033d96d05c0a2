#include "strtf/numerics/tensor.hpp"

#include <fmt/format.h>

namespace strtf::ad {

Parameter::Parameter(std::string name, Matrix value, bool requires_grad)
    : name(std::move(name)), value(std::move(value)), requires_grad(requires_grad) {
  zero_grad();
}

void Parameter::zero_grad() { grad = Matrix::Zero(value.rows(), value.cols()); }

std::string shape_string(const Matrix& m) { return fmt::format("{}x{}", m.rows(), m.cols()); }

const Matrix& Tensor::value() const { return graph().value(id_); }
const Matrix& Tensor::grad() const { return graph().grad(id_); }
bool Tensor::requires_grad() const { return graph().requires_grad(id_); }

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) {
    throw ShapeError(fmt::format("scalar(): {} is not 1x1", describe()));
  }
  return v(0, 0);
}

Graph& Tensor::graph() const {
  if (graph_ == nullptr) throw GraphError("tensor is not attached to a graph");
  return *graph_;
}

std::string Tensor::describe() const {
  if (graph_ == nullptr) return "<detached tensor>";
  return fmt::format("node #{} ({}, {})", id_, graph_->op(id_), shape_string(value()));
}

Tensor Graph::constant(Matrix value, std::string_view name) {
  if (!value.allFinite()) {
    throw NumericError(fmt::format("non-finite constant '{}'", name));
  }
  nodes_.push_back(Node{std::string(name), std::move(value), {}, {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Tensor Graph::constant(double value, std::string_view name) {
  return constant(Matrix::Constant(1, 1, value), name);
}

Tensor Graph::leaf(Parameter& param) {
  if (!param.value.allFinite()) {
    throw NumericError(fmt::format("parameter '{}' holds non-finite values", param.name));
  }
  nodes_.push_back(Node{param.name, param.value, {}, {}, {}, &param, param.requires_grad});
  return {this, nodes_.size() - 1};
}

Tensor Graph::variable(Matrix value, std::string_view name) {
  if (!value.allFinite()) {
    throw NumericError(fmt::format("non-finite variable '{}'", name));
  }
  nodes_.push_back(Node{std::string(name), std::move(value), {}, {}, {}, nullptr, true});
  return {this, nodes_.size() - 1};
}

Tensor Graph::record(std::string_view op, Matrix value, std::vector<std::size_t> inputs,
                     BackwardFn backward) {
  const std::size_t id = nodes_.size();
  if (!value.allFinite()) {
    throw NumericError(fmt::format("non-finite value produced by node #{} ({})", id, op));
  }
  bool needs_grad = false;
  for (std::size_t in : inputs) {
    if (in >= id) throw GraphError(fmt::format("node #{} ({}) references a later node", id, op));
    needs_grad = needs_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::string(op), std::move(value), {}, std::move(inputs),
                        needs_grad ? std::move(backward) : BackwardFn{}, nullptr, needs_grad});
  return {this, id};
}

void Graph::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw ShapeError(fmt::format("gradient {} does not match node #{} ({}, {})", shape_string(g),
                                 id, n.op, shape_string(n.value)));
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

const Matrix& Graph::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!backward_done_) throw GraphError("gradient requested before backward()");
  static const Matrix empty;
  return n.grad.size() == 0 ? empty : n.grad;
}

void Graph::backward(Tensor root) {
  if (nodes_.empty() || !root.valid() || &root.graph() != this) {
    throw GraphError("backward() called before any forward evaluation on this graph");
  }
  Node& r = nodes_.at(root.id());
  if (r.value.size() != 1) {
    throw ShapeError(fmt::format("backward() needs a scalar root, got node #{} ({}, {})",
                                 root.id(), r.op, shape_string(r.value)));
  }
  if (r.requires_grad) r.grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
  backward_done_ = true;
}

}  // namespace strtf::ad
