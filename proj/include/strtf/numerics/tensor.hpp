#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace strtf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace ad {

/// A learnable leaf that outlives the per-step graphs. Gradients accumulate
/// into `grad` on every backward pass until `zero_grad` is called.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value, bool requires_grad = true);

  void zero_grad();

  std::string name;
  Matrix value;
  Matrix grad;
  bool requires_grad = true;
};

class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] const Matrix& grad() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Graph& graph() const;
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return graph_ != nullptr; }
  [[nodiscard]] std::string describe() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so the insertion order is a topological order and backward is a single
/// reverse sweep.
class Graph {
 public:
  /// Receives the gradient flowing into the node and scatters it into the
  /// node's inputs through `Graph::accumulate`.
  using BackwardFn = std::function<void(Graph&, const Matrix& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Matrix value, std::string_view name = "constant");
  Tensor constant(double value, std::string_view name = "constant");
  /// Leaf bound to a Parameter; backward adds into `param.grad`.
  Tensor leaf(Parameter& param);
  /// Free-standing differentiable input; read its gradient with `grad()`.
  Tensor variable(Matrix value, std::string_view name = "variable");

  /// Appends an operation node. Rejects non-finite outputs, naming the node.
  Tensor record(std::string_view op, Matrix value, std::vector<std::size_t> inputs,
                BackwardFn backward);

  /// Reverse sweep from a 1x1 root.
  void backward(Tensor root);

  /// Adds `g` into the gradient buffer of node `id` if that node needs it.
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
      throw ShapeError("gradient shape does not match node #" + std::to_string(id) + " (" + n.op +
                       ")");
    }
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] const Matrix& grad(std::size_t id) const;
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  [[nodiscard]] const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] bool has_backward_run() const { return backward_done_; }

 private:
  struct Node {
    std::string op;
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

std::string shape_string(const Matrix& m);

}  // namespace ad
}  // namespace strtf
