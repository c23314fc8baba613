// SPDX-License-Identifier: Apache-2.0
//
// Dense numeric helpers shared by every module: tensor aliases, error types,
// scalar-templated kernels (log-sum-exp, Gaussian densities, clipping,
// triangular algebra), the parameter store and the Adam optimizer.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dssm {

using Index = Eigen::Index;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised when operand shapes do not agree. The message names the op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on NaN/Inf in a loss, gradient or state. `step` is -1 when unknown.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Raised for malformed configuration or command-line input.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kLn2 = std::numbers::ln2;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

/// Overflow-safe log(sum(exp(x))). Returns -inf when every entry is -inf.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

/// Numerically stable softmax of a vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  const auto m = logits.maxCoeff();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> p = (logits.array() - m).exp();
  return p / p.sum();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  return logits.array() - log_sum_exp(logits);
}

/// Sum over coordinates of log N(x_i; mu_i, sigma_i^2).
template <typename DX, typename DM, typename DS>
typename DX::Scalar gaussian_logpdf(const Eigen::MatrixBase<DX>& x,
                                    const Eigen::MatrixBase<DM>& mu,
                                    const Eigen::MatrixBase<DS>& sigma) {
  const auto z = ((x - mu).array() / sigma.array());
  return -0.5 * z.square().sum() - sigma.array().log().sum() -
         0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

inline double gaussian_logpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * kLog2Pi;
}

template <typename Derived>
typename Derived::Scalar std_normal_logpdf(const Eigen::MatrixBase<Derived>& x) {
  return -0.5 * x.squaredNorm() - 0.5 * static_cast<double>(x.size()) * kLog2Pi;
}

/// sign(raw)*max(|raw|, delta) with sign(0) = +1.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> clip_diagonal(
    const Eigen::MatrixBase<Derived>& raw, double delta) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> out(raw.size());
  for (Index i = 0; i < raw.size(); ++i) {
    const double r = raw(i);
    const double s = r < 0.0 ? -1.0 : 1.0;
    out(i) = s * std::max(std::abs(r), delta);
  }
  return out;
}

/// Number of entries of a d x d lower-triangular matrix.
constexpr Index tril_size(Index d) { return d * (d + 1) / 2; }

/// Dense lower-triangular matrix from its diagonal and its strictly-lower
/// entries packed row by row: (1,0), (2,0), (2,1), (3,0), ...
template <typename DD, typename DO>
Mat assemble_tril(const Eigen::MatrixBase<DD>& diag, const Eigen::MatrixBase<DO>& off) {
  const Index d = diag.size();
  Mat L = Mat::Zero(d, d);
  L.diagonal() = diag;
  Index k = 0;
  for (Index i = 1; i < d; ++i)
    for (Index j = 0; j < i; ++j) L(i, j) = off(k++);
  return L;
}

// ---------------------------------------------------------------------------
// Parameters

struct ParamId {
  int index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(ParamId, ParamId) = default;
};

/// Named dense parameter tensors. Insertion order is stable and defines the
/// layout of gradient lists and checkpoints.
class ParamStore {
 public:
  ParamId add(std::string name, Mat init);
  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;

  Mat& value(ParamId p) { return values_.at(static_cast<std::size_t>(p.index)); }
  const Mat& value(ParamId p) const { return values_.at(static_cast<std::size_t>(p.index)); }
  Mat& value(std::string_view name) { return value(id(name)); }
  const Mat& value(std::string_view name) const { return value(id(name)); }
  const std::string& name(ParamId p) const { return names_.at(static_cast<std::size_t>(p.index)); }

  std::size_t size() const { return values_.size(); }
  Index scalar_count() const;
  std::vector<Mat> zeros_like() const;
  bool all_finite() const;

  std::vector<Mat>& values() { return values_; }
  const std::vector<Mat>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
  std::unordered_map<std::string, int> index_;
};

using GradList = std::vector<Mat>;

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Mat> m;
  std::vector<Mat> v;
  long step = 0;

  AdamState() = default;
  AdamState(const ParamStore& params, AdamConfig cfg);
};

/// One bias-corrected Adam descent step. Throws NumericError on a non-finite
/// gradient and leaves parameters and state untouched in that case.
void adam_step(ParamStore& params, std::span<const Mat> grads, AdamState& state);

/// Rescales grads in place so that their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Mat> grads, double max_norm);

}  // namespace dssm
