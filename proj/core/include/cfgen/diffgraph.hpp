#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Graph records every operation applied to its Vars in creation order,
// which is already a topological order, so backward() is a single reverse
// sweep. Batches are rows; features are columns.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cfgen/error.hpp"

namespace cfgen::diffgraph {

using Matrix = Eigen::MatrixXd;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is collected by backward().
  Var parameter(Matrix value);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward() target with respect to `v`
  /// (zeros if `v` did not influence it).
  Matrix grad(Var v) const;

  /// Seeds d(out)/d(out) = 1 for a 1x1 `out` and propagates to every node.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

  // Internal: used by the op implementations.
  using Backward = std::function<void(Graph&, const Matrix& upstream)>;
  Var record(Matrix value, std::vector<int> parents, Backward backward);
  bool requires_grad(Var v) const;
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);
/// Adds a 1 x k row to every row of an n x k matrix.
Var add_row(Var a, Var row);
/// Multiplies row i of `a` by col(i); `col` is n x 1.
Var scale_rows(Var a, Var col);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var operator*(Var a, Var b);
Var operator*(double s, Var a);
Var operator+(Var a, double s);
Var operator-(Var a);

Var relu(Var a);
/// tanh approximation of GELU.
Var gelu(Var a);
/// Logistic function; results are clamped into [lo, hi] and the gradient is
/// zero where the clamp is active.
Var sigmoid(Var a, double lo = 0.0, double hi = 1.0);
Var log(Var a);
Var exp(Var a);
Var square(Var a);

/// Sum of all entries (1x1).
Var sum(Var a);
/// Mean of all entries (1x1).
Var mean(Var a);
/// Per-row sums (n x 1).
Var row_sum(Var a);
/// Columns [start, start + count).
Var cols(Var a, Eigen::Index start, Eigen::Index count);
/// Horizontal concatenation; all parts share the row count.
Var hconcat(std::span<const Var> parts);
/// Repeats a 1 x k row n times.
Var repeat_row(Var row, Eigen::Index n);

// ---- evaluation helpers ---------------------------------------------------

struct ValueAndGrad {
  double value = 0.0;
  std::vector<Matrix> grads;
};

/// A loss builds a 1x1 Var from parameter Vars bound in the given Graph.
using LossFn = std::function<Var(Graph&, std::span<const Var> params)>;

/// Evaluates `loss` at `params` and returns the exact reverse-mode gradient.
/// Throws TrainingError if the loss is not finite.
ValueAndGrad value_and_grad(const LossFn& loss, std::span<const Matrix> params);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "param p, entry (i, j): analytic a vs numeric n"
};

/// Central finite differences on every parameter entry.
/// Relative error uses max(|analytic|, |numeric|, floor) as denominator so
/// near-zero gradients are compared absolutely.
GradCheckReport check_gradient(const LossFn& loss, std::vector<Matrix> params,
                               double step = 1e-5, double floor = 1e-2);

}  // namespace cfgen::diffgraph
