// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over a dynamically recorded graph.
//
// A Tape records nodes in creation order, which is also a topological order.
// Every node caches its forward value; nodes that depend on a parameter or a
// variable leaf also keep a closure that maps the node's output gradient to
// gradients of its inputs. Constants carry no closure, so evaluation-only
// graphs cost little more than the plain Eigen arithmetic.

#pragma once

#include "dssm/numcore.hpp"

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>

namespace dssm {

class Tape;
class GradSink;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  /// Value of a 1x1 node.
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
};

using BackwardFn = std::function<void(const Mat& grad_out, GradSink& sink)>;

/// Result of a backward sweep: one gradient per node (empty means zero).
class Gradients {
 public:
  /// Gradient of the swept output w.r.t. v (zeros of v's shape if unreached).
  Mat wrt(Var v) const;
  /// Adds parameter-leaf gradients into a list aligned with the ParamStore.
  void accumulate(GradList& into) const;
  GradList params() const;

 private:
  friend class Tape;
  friend class GradSink;
  const Tape* tape_ = nullptr;
  std::vector<Mat> grads_;
};

class GradSink {
 public:
  GradSink(const Tape& tape, Gradients& out) : tape_(tape), out_(out) {}

  template <typename Derived>
  void add(Var v, const Eigen::MatrixBase<Derived>& g);

 private:
  const Tape& tape_;
  Gradients& out_;
};

class Tape {
 public:
  /// With record_gradients false, parameter leaves are plain constants and
  /// no backward closures are kept (evaluation-only graphs).
  explicit Tape(const ParamStore* params = nullptr, bool record_gradients = true)
      : params_(params), record_(record_gradients) {
    if (params_) param_nodes_.assign(params_->size(), -1);
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const ParamStore* params() const { return params_; }

  Var constant(Mat value);
  Var constant(double value);
  /// Differentiable leaf that is not a parameter (tests, input sensitivity).
  Var variable(Mat value);
  /// Leaf bound to a stored parameter; one node per parameter per tape.
  Var param(ParamId id);
  Var param(std::string_view name) { return param(params_->id(name)); }

  /// Appends a node. fn may be empty when requires_grad is false.
  Var push(Mat value, bool requires_grad, BackwardFn fn);
  /// Appends a node whose requires_grad is inherited from inputs.
  Var push(Mat value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  int param_index(int id) const { return nodes_[static_cast<std::size_t>(id)].param; }
  std::size_t size() const { return nodes_.size(); }

  /// Drops every node; Vars from before the call become dangling.
  void clear();

  /// Gradients of a 1x1 output with respect to every node. The tape is not
  /// modified, so several outputs of one graph can be swept independently.
  Gradients backward(Var out) const;

 private:
  struct Node {
    Mat value;
    BackwardFn backward;
    bool requires_grad = false;
    int param = -1;
  };
  std::deque<Node> nodes_;
  std::vector<int> param_nodes_;
  const ParamStore* params_;
  bool record_ = true;
};

template <typename Derived>
void GradSink::add(Var v, const Eigen::MatrixBase<Derived>& g) {
  if (!tape_.requires_grad(v.id)) return;
  Mat& slot = out_.grads_[static_cast<std::size_t>(v.id)];
  if (slot.size() == 0)
    slot = g;
  else
    slot += g;
}

// ---------------------------------------------------------------------------
// Primitive operations. All shapes must agree exactly; mismatches throw
// ShapeError naming the op and both shapes.

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var operator*(Var a, Var b);
/// Elementwise quotient.
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator+(Var a, double s);

/// W x for W (r x c) and x (c x 1).
Var matvec(Var W, Var x);
/// W x + b.
Var affine(Var W, Var x, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var log_abs(Var a);
Var square(Var a);

/// Sum of all entries, 1x1.
Var sum(Var a);
/// Sum of several same-shape nodes.
Var add_n(std::span<const Var> terms);
/// log(sum(exp(a))), 1x1, overflow-safe.
Var log_sum_exp(Var a);
/// logits(i) - log_sum_exp(logits), 1x1.
Var log_softmax_at(Var logits, Index i);
/// Entry i of a vector, 1x1.
Var element(Var a, Index i);

/// Vertical concatenation of column vectors (or 1x1 scalars).
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(Var a, Index start, Index length);
/// Row i of a matrix, returned as a column vector.
Var row(Var M, Index i);

/// sum_i log N(x_i; mu_i, sigma_i^2), 1x1.
Var gaussian_logpdf(Var x, Var mu, Var sigma);
/// sum_i log N(x_i; 0, 1), 1x1.
Var std_normal_logpdf(Var x);

/// sign(raw)*max(|raw|, delta), sign(0)=+1. Gradient passes where |raw| > delta.
Var clip_diagonal(Var raw, double delta);
/// Elementwise clamp to [lo, hi]; zero gradient outside.
Var clamp(Var a, double lo, double hi);

/// L x where L is lower triangular with the given diagonal and packed
/// strictly-lower entries (see assemble_tril).
Var tril_matvec(Var diag, Var off, Var x);
/// Solves L x = y by forward substitution.
Var tril_solve(Var diag, Var off, Var y);

/// Same value, no gradient flows back.
Var stop_gradient(Var a);

}  // namespace dssm
