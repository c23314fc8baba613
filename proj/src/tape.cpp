// SPDX-License-Identifier: Apache-2.0
#include "dssm/tape.hpp"

#include <sstream>

namespace dssm {

namespace {

std::string shape_str(const Mat& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const char* op, Var a, Var b) {
  const Mat& x = a.value();
  const Mat& y = b.value();
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(x) + " vs " + shape_str(y));
}

void require_vector(const char* op, Var a) {
  if (a.cols() != 1)
    throw ShapeError(std::string(op) + ": expected a column vector, got " + shape_str(a.value()));
}

Mat scalar_mat(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return m;
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::logic_error("operation on an invalid Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
  return tape_of(a);
}

}  // namespace

const Mat& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): node is " + shape_str(v) + ", not 1x1");
  return v(0, 0);
}

// ---------------------------------------------------------------------------

Mat Gradients::wrt(Var v) const {
  const Mat& g = grads_.at(static_cast<std::size_t>(v.id));
  if (g.size() == 0) return Mat::Zero(v.rows(), v.cols());
  return g;
}

void Gradients::accumulate(GradList& into) const {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    const int p = tape_->param_index(static_cast<int>(i));
    if (p < 0 || grads_[i].size() == 0) continue;
    Mat& slot = into.at(static_cast<std::size_t>(p));
    if (slot.size() == 0)
      slot = grads_[i];
    else
      slot += grads_[i];
  }
}

GradList Gradients::params() const {
  GradList out = tape_->params()->zeros_like();
  accumulate(out);
  return out;
}

// ---------------------------------------------------------------------------

Var Tape::constant(Mat value) { return push(std::move(value), false, {}); }

Var Tape::constant(double value) { return constant(scalar_mat(value)); }

Var Tape::variable(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, true, -1});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(ParamId id) {
  if (!params_) throw std::logic_error("tape has no parameter store");
  auto& slot = param_nodes_.at(static_cast<std::size_t>(id.index));
  if (slot >= 0) return Var{this, slot};
  nodes_.push_back(Node{params_->value(id), {}, record_, id.index});
  slot = static_cast<int>(nodes_.size() - 1);
  return Var{this, slot};
}

Var Tape::push(Mat value, bool requires_grad, BackwardFn fn) {
  if (!requires_grad) fn = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(fn), requires_grad, -1});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Mat value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool rg = false;
  for (Var v : inputs) rg = rg || requires_grad(v.id);
  return push(std::move(value), rg, std::move(fn));
}

void Tape::clear() {
  nodes_.clear();
  if (params_) param_nodes_.assign(params_->size(), -1);
}

Gradients Tape::backward(Var out) const {
  if (out.tape != this) throw std::logic_error("backward: output belongs to another tape");
  if (out.size() != 1)
    throw ShapeError("backward: output must be a scalar, got " + shape_str(out.value()));
  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  g.grads_[static_cast<std::size_t>(out.id)] = Mat::Ones(1, 1);
  GradSink sink(*this, g);
  for (int i = out.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Mat& gi = g.grads_[static_cast<std::size_t>(i)];
    if (!n.backward || gi.size() == 0) continue;
    n.backward(gi, sink);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Var operator+(Var a, Var b) {
  require_same_shape("add", a, b);
  Tape& t = tape_of(a, b);
  return t.push(a.value() + b.value(), {a, b}, [a, b](const Mat& g, GradSink& s) {
    s.add(a, g);
    s.add(b, g);
  });
}

Var operator-(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tape& t = tape_of(a, b);
  return t.push(a.value() - b.value(), {a, b}, [a, b](const Mat& g, GradSink& s) {
    s.add(a, g);
    s.add(b, -g);
  });
}

Var operator*(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tape& t = tape_of(a, b);
  return t.push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](const Mat& g, GradSink& s) {
    s.add(a, g.cwiseProduct(b.value()));
    s.add(b, g.cwiseProduct(a.value()));
  });
}

Var operator/(Var a, Var b) {
  require_same_shape("div", a, b);
  Tape& t = tape_of(a, b);
  return t.push(a.value().cwiseQuotient(b.value()), {a, b}, [a, b](const Mat& g, GradSink& s) {
    s.add(a, g.cwiseQuotient(b.value()));
    s.add(b, -(g.array() * a.value().array() / b.value().array().square()).matrix());
  });
}

Var operator-(Var a) {
  Tape& t = tape_of(a);
  return t.push(-a.value(), {a}, [a](const Mat& g, GradSink& s) { s.add(a, -g); });
}

Var operator*(double k, Var a) {
  Tape& t = tape_of(a);
  return t.push(k * a.value(), {a}, [a, k](const Mat& g, GradSink& s) { s.add(a, k * g); });
}

Var operator+(Var a, double k) {
  Tape& t = tape_of(a);
  return t.push((a.value().array() + k).matrix(), {a},
                [a](const Mat& g, GradSink& s) { s.add(a, g); });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matvec(Var W, Var x) {
  require_vector("matvec", x);
  if (W.cols() != x.rows())
    throw ShapeError("matvec: W is " + shape_str(W.value()) + ", x is " + shape_str(x.value()));
  Tape& t = tape_of(W, x);
  return t.push(W.value() * x.value(), {W, x}, [W, x](const Mat& g, GradSink& s) {
    s.add(W, g * x.value().transpose());
    s.add(x, W.value().transpose() * g);
  });
}

Var affine(Var W, Var x, Var b) {
  require_vector("affine", x);
  if (W.cols() != x.rows() || W.rows() != b.rows() || b.cols() != 1)
    throw ShapeError("affine: W is " + shape_str(W.value()) + ", x is " + shape_str(x.value()) +
                     ", b is " + shape_str(b.value()));
  Tape& t = tape_of(W, x);
  if (b.tape != &t) throw std::logic_error("operands live on different tapes");
  Mat out = W.value() * x.value();
  out += b.value();
  return t.push(std::move(out), {W, x, b}, [W, x, b](const Mat& g, GradSink& s) {
    s.add(W, g * x.value().transpose());
    s.add(x, W.value().transpose() * g);
    s.add(b, g);
  });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Mat y = a.value().array().tanh().matrix();
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(y), {a}, [a, &t, out_id](const Mat& g, GradSink& s) {
    const Mat& y = t.value(out_id);
    s.add(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(y), {a}, [a, &t, out_id](const Mat& g, GradSink& s) {
    const Mat& y = t.value(out_id);
    s.add(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  const int out_id = static_cast<int>(t.size());
  return t.push(a.value().array().exp().matrix(), {a}, [a, &t, out_id](const Mat& g, GradSink& s) {
    s.add(a, g.cwiseProduct(t.value(out_id)));
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  return t.push(a.value().array().log().matrix(), {a}, [a](const Mat& g, GradSink& s) {
    s.add(a, g.cwiseQuotient(a.value()));
  });
}

Var log_abs(Var a) {
  Tape& t = tape_of(a);
  return t.push(a.value().array().abs().log().matrix(), {a}, [a](const Mat& g, GradSink& s) {
    s.add(a, g.cwiseQuotient(a.value()));
  });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  return t.push(a.value().cwiseAbs2(), {a}, [a](const Mat& g, GradSink& s) {
    s.add(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

// ---------------------------------------------------------------------------
// Reductions and indexing

Var sum(Var a) {
  Tape& t = tape_of(a);
  return t.push(scalar_mat(a.value().sum()), {a}, [a](const Mat& g, GradSink& s) {
    s.add(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  Tape& t = tape_of(terms.front());
  Mat out = terms.front().value();
  bool rg = t.requires_grad(terms.front().id);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape("add_n", terms.front(), terms[i]);
    out += terms[i].value();
    rg = rg || t.requires_grad(terms[i].id);
  }
  std::vector<Var> ins(terms.begin(), terms.end());
  return t.push(std::move(out), rg, [ins](const Mat& g, GradSink& s) {
    for (Var v : ins) s.add(v, g);
  });
}

Var log_sum_exp(Var a) {
  Tape& t = tape_of(a);
  const double lse = log_sum_exp(a.value());
  return t.push(scalar_mat(lse), {a}, [a, lse](const Mat& g, GradSink& s) {
    s.add(a, (g(0, 0) * (a.value().array() - lse).exp()).matrix());
  });
}

Var log_softmax_at(Var logits, Index i) {
  require_vector("log_softmax_at", logits);
  if (i < 0 || i >= logits.rows())
    throw ShapeError("log_softmax_at: index " + std::to_string(i) + " out of range for " +
                     shape_str(logits.value()));
  Tape& t = tape_of(logits);
  const double lse = log_sum_exp(logits.value());
  return t.push(scalar_mat(logits.value()(i) - lse), {logits},
                [logits, i, lse](const Mat& g, GradSink& s) {
                  Mat d = -(logits.value().array() - lse).exp().matrix();
                  d(i) += 1.0;
                  s.add(logits, g(0, 0) * d);
                });
}

Var element(Var a, Index i) {
  if (i < 0 || i >= a.size())
    throw ShapeError("element: index " + std::to_string(i) + " out of range for " +
                     shape_str(a.value()));
  Tape& t = tape_of(a);
  return t.push(scalar_mat(a.value()(i)), {a}, [a, i](const Mat& g, GradSink& s) {
    Mat d = Mat::Zero(a.rows(), a.cols());
    d(i) = g(0, 0);
    s.add(a, d);
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  Tape& t = tape_of(parts.front());
  Index n = 0;
  bool rg = false;
  for (Var p : parts) {
    require_vector("concat", p);
    if (p.tape != &t) throw std::logic_error("operands live on different tapes");
    n += p.rows();
    rg = rg || t.requires_grad(p.id);
  }
  Mat out(n, 1);
  Index off = 0;
  for (Var p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ins](const Mat& g, GradSink& s) {
    Index o = 0;
    for (Var v : ins) {
      s.add(v, g.middleRows(o, v.rows()));
      o += v.rows();
    }
  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice(Var a, Index start, Index length) {
  require_vector("slice", a);
  if (start < 0 || length < 0 || start + length > a.rows())
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_str(a.value()));
  Tape& t = tape_of(a);
  return t.push(a.value().middleRows(start, length), {a},
                [a, start, length](const Mat& g, GradSink& s) {
                  Mat d = Mat::Zero(a.rows(), 1);
                  d.middleRows(start, length) = g;
                  s.add(a, d);
                });
}

Var row(Var M, Index i) {
  if (i < 0 || i >= M.rows())
    throw ShapeError("row: index " + std::to_string(i) + " out of range for " +
                     shape_str(M.value()));
  Tape& t = tape_of(M);
  return t.push(M.value().row(i).transpose(), {M}, [M, i](const Mat& g, GradSink& s) {
    Mat d = Mat::Zero(M.rows(), M.cols());
    d.row(i) = g.transpose();
    s.add(M, d);
  });
}

// ---------------------------------------------------------------------------
// Densities

Var gaussian_logpdf(Var x, Var mu, Var sigma) {
  require_vector("gaussian_logpdf", x);
  require_same_shape("gaussian_logpdf", x, mu);
  require_same_shape("gaussian_logpdf", x, sigma);
  Tape& t = tape_of(x, mu);
  const double v = gaussian_logpdf(x.value(), mu.value(), sigma.value());
  return t.push(scalar_mat(v), {x, mu, sigma}, [x, mu, sigma](const Mat& g, GradSink& s) {
    const auto sg = sigma.value().array();
    const Eigen::ArrayXd z = (x.value().array() - mu.value().array()) / sg;
    const double go = g(0, 0);
    s.add(x, (-go * z / sg).matrix());
    s.add(mu, (go * z / sg).matrix());
    s.add(sigma, (go * (z.square() - 1.0) / sg).matrix());
  });
}

Var std_normal_logpdf(Var x) {
  require_vector("std_normal_logpdf", x);
  Tape& t = tape_of(x);
  return t.push(scalar_mat(std_normal_logpdf(x.value())), {x},
                [x](const Mat& g, GradSink& s) { s.add(x, -g(0, 0) * x.value()); });
}

// ---------------------------------------------------------------------------
// Clipping

Var clip_diagonal(Var raw, double delta) {
  require_vector("clip_diagonal", raw);
  Tape& t = tape_of(raw);
  return t.push(clip_diagonal(raw.value(), delta), {raw}, [raw, delta](const Mat& g, GradSink& s) {
    const auto r = raw.value().array();
    s.add(raw, (g.array() * (r.abs() > delta).cast<double>()).matrix());
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = tape_of(a);
  return t.push(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [a, lo, hi](const Mat& g, GradSink& s) {
    const auto v = a.value().array();
    s.add(a, (g.array() * ((v >= lo) && (v <= hi)).cast<double>()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Lower-triangular algebra

namespace {

void check_tril_operands(const char* op, Var diag, Var off, Var x) {
  require_vector(op, diag);
  require_vector(op, off);
  require_vector(op, x);
  const Index d = diag.rows();
  if (off.rows() != d * (d - 1) / 2 || x.rows() != d)
    throw ShapeError(std::string(op) + ": diag " + shape_str(diag.value()) + ", off " +
                     shape_str(off.value()) + ", vector " + shape_str(x.value()));
}

// Gradient of a scalar w.r.t. the entries of L, given dL = outer(u, v)
// restricted to the lower triangle.
void scatter_tril_outer(const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& v,
                        Mat& gdiag, Mat& goff) {
  const Index d = u.size();
  gdiag = (u.array() * v.array()).matrix();
  goff.resize(d * (d - 1) / 2, 1);
  Index k = 0;
  for (Index i = 1; i < d; ++i)
    for (Index j = 0; j < i; ++j) goff(k++) = u(i) * v(j);
}

}  // namespace

Var tril_matvec(Var diag, Var off, Var x) {
  check_tril_operands("tril_matvec", diag, off, x);
  Tape& t = tape_of(diag, x);
  const Mat L = assemble_tril(diag.value().col(0), off.value().col(0));
  Mat y = L.triangularView<Eigen::Lower>() * x.value();
  return t.push(std::move(y), {diag, off, x}, [diag, off, x](const Mat& g, GradSink& s) {
    const Mat L = assemble_tril(diag.value().col(0), off.value().col(0));
    s.add(x, L.triangularView<Eigen::Lower>().transpose() * g);
    Mat gd, go;
    scatter_tril_outer(g.col(0), x.value().col(0), gd, go);
    s.add(diag, gd);
    s.add(off, go);
  });
}

Var tril_solve(Var diag, Var off, Var y) {
  check_tril_operands("tril_solve", diag, off, y);
  Tape& t = tape_of(diag, y);
  const Mat L = assemble_tril(diag.value().col(0), off.value().col(0));
  Mat x = L.triangularView<Eigen::Lower>().solve(y.value());
  const int out_id = static_cast<int>(t.size());
  return t.push(std::move(x), {diag, off, y}, [diag, off, y, &t, out_id](const Mat& g, GradSink& s) {
    const Mat L = assemble_tril(diag.value().col(0), off.value().col(0));
    const Vec gy = L.triangularView<Eigen::Lower>().transpose().solve(g);
    s.add(y, gy);
    Mat gd, go;
    scatter_tril_outer(-gy, t.value(out_id).col(0), gd, go);
    s.add(diag, gd);
    s.add(off, go);
  });
}

Var stop_gradient(Var a) { return tape_of(a).constant(a.value()); }

}  // namespace dssm
