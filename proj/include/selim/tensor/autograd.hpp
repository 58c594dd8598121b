#pragma once

#include "selim/core.hpp"
#include "selim/random.hpp"

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace selim::ad {

/// A named trainable matrix together with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

enum class DropoutMode { TrainStochastic, EvalStochastic, EvalDeterministic };

/// Inverted dropout: survivors are scaled by 1/(1-rate) so the deterministic
/// mode is the identity.
struct DropoutState {
  double rate = 0.0;
  DropoutMode mode = DropoutMode::EvalDeterministic;
  Rng rng{0};

  DropoutState() = default;
  DropoutState(double r, DropoutMode m, std::uint64_t seed);

  bool stochastic() const { return mode != DropoutMode::EvalDeterministic && rate > 0.0; }
};

/// Samples a dropout multiplier matrix (0 or 1/(1-rate)) of the given shape.
Matrix dropout_multiplier(Eigen::Index rows, Eigen::Index cols, DropoutState& state);

/// Non-graph dropout on a plain matrix.
Matrix dropout_apply(const Matrix& x, DropoutState& state);

class Graph;

/// Handle to a node inside a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of a single forward evaluation. Nodes are appended in evaluation
/// order, so reverse insertion order is a valid topological order.
class Graph {
 public:
  struct Node {
    std::string_view kind;
    std::string label;
    std::vector<std::size_t> parents;
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, const Node&)> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var parameter(Parameter& p);

  /// Appends an op node. `backward` receives the node with its grad filled.
  Var emit(std::string_view kind, std::vector<std::size_t> parents, Matrix value,
           std::function<void(Graph&, const Node&)> backward);

  /// Reverse sweep from a 1x1 loss. Parameter gradients accumulate across calls.
  void backward(Var loss);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& node(std::size_t id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of node `id` if it needs one.
  void accumulate(std::size_t id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  void set_label(Var v, std::string label) { nodes_[v.id()].label = std::move(label); }

 private:
  std::vector<Node> nodes_;
};

// Op set used by the imputation models.
Var matmul(Var a, Var b);
Var linear(Var x, Var weight, Var bias);  ///< x W + 1 b^T, bias is 1 x out
Var add(Var a, Var b);
Var add_row(Var a, Var row);  ///< broadcast a 1 x n row over every row of a
Var sub(Var a, Var b);
Var mul(Var a, Var b);  ///< elementwise
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var abs(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var dropout(Var x, DropoutState& state);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
/// Per row-block of height `block`: out_i = A_i B_i^T.
Var block_matmul_nt(Var a, Var b, Eigen::Index block);
/// Per row-block of height `block`: out_i = P_i V_i, P_i is block x block.
Var block_matmul(Var p, Var v, Eigen::Index block);
Var sum(Var a);
Var mean(Var a);

}  // namespace selim::ad
