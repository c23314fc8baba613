// SPDX-License-Identifier: Apache-2.0
#include "dssm/numcore.hpp"

namespace dssm {

ParamId ParamStore::add(std::string name, Mat init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  const int idx = static_cast<int>(values_.size());
  index_.emplace(name, idx);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return ParamId{idx};
}

ParamId ParamStore::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return ParamId{it->second};
}

bool ParamStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::vector<Mat> ParamStore::zeros_like() const {
  std::vector<Mat> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Mat::Zero(v.rows(), v.cols()));
  return out;
}

bool ParamStore::all_finite() const {
  for (const auto& v : values_)
    if (!v.allFinite()) return false;
  return true;
}

AdamState::AdamState(const ParamStore& params, AdamConfig cfg)
    : config(cfg), m(params.zeros_like()), v(params.zeros_like()) {}

void adam_step(ParamStore& params, std::span<const Mat> grads, AdamState& state) {
  const auto& cfg = state.config;
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw ShapeError("adam_step: gradient list does not match parameter store");
  if (!(cfg.lr >= 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ConfigError("adam_step: invalid hyperparameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Mat& p = params.values()[i];
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols())
      throw ShapeError("adam_step: gradient for '" + params.name(ParamId{static_cast<int>(i)}) +
                       "' has wrong shape");
    if (!grads[i].allFinite())
      throw NumericError("adam_step: non-finite gradient for '" +
                             params.name(ParamId{static_cast<int>(i)}) + "'",
                         state.step);
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i].cwiseAbs2();
    if (cfg.lr == 0.0) continue;
    params.values()[i].array() -=
        cfg.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + cfg.eps);
  }
}

double clip_grad_norm(std::span<Mat> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace dssm
