#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Graph is a tape: every operation appends a node holding its value and a
// closure that pushes the node's gradient into its inputs. Nodes that do not
// depend on any trainable leaf carry no closure, so evaluation without
// gradients runs through the same code at little extra cost.

#include "fckt/tensor.hpp"

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

namespace fckt::ag {

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Matrix& value() const;
  // Gradient after Graph::backward; an empty matrix when nothing flowed here.
  const Matrix& grad() const;
  double scalar() const { return value()(0, 0); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // A value that never receives a gradient.
  Var constant(Matrix value);
  // A free input that receives a gradient (used for gradient checks and for
  // differentiating with respect to intermediate quantities).
  Var input(Matrix value);
  // The parameter's current value; backward accumulates into Parameter::grad
  // unless the parameter is frozen. Repeated calls reuse one node.
  Var param(Parameter& p);

  // Appends an operation node. `fn` is dropped when no input needs a gradient.
  Var make(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  // Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every node
  // recorded before it. May be called more than once on the same graph after
  // clear_grads().
  void backward(Var root);
  void clear_grads();

  const Matrix& value(std::size_t id) const;
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Adds `delta` into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Matrix& delta);
  template <typename Fn>
  void accumulate_with(std::size_t id, Fn&& add_into) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    ensure_grad(n);
    add_into(n.param != nullptr ? n.param->grad : n.grad);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void ensure_grad(Node& n);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// --- elementary operations -------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1 x c row to every row of a (r x c).
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var tanh(Var a);
// Exact GELU, x * Phi(x).
Var gelu(Var a);
// Row-wise layer normalization with a learned 1 x c gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-12);
Var softmax_rows(Var a);
// Softmax over every entry of a (used for n x 1 position logits).
Var softmax_all(Var a);
// Inverted dropout with keep probability 1 - p. Identity when p == 0.
Var dropout(Var a, double p, std::mt19937_64& rng);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const int> rows);
// Sum of rows first..last inclusive, as a 1 x c row.
Var sum_rows(Var a, Eigen::Index first, Eigen::Index last);
// Sum of all entries, as 1 x 1.
Var sum(Var a);
Var add_scalars(std::span<const Var> parts);

// Negative log of softmax(logits) at flat index `target`, clamped so that the
// log-probability is never below log(eps). A clamped term passes no gradient;
// `clamped`, when provided, is incremented.
Var nll_from_logits(Var logits, Eigen::Index target, double eps, int* clamped = nullptr);
// -log(max(probs[target], eps)) for an already-normalized probability vector.
Var nll_from_probs(Var probs, Eigen::Index target, double eps, int* clamped = nullptr);

}  // namespace fckt::ag
