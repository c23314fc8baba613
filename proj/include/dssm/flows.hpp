// SPDX-License-Identifier: Apache-2.0
//
// Invertible transitions h = F(h_prev, xi), conditioned on the previous state.
//
//   ID    h = h_prev + xi                                   logdet 0
//   DIAG  h = g(h_prev) + D(h_prev) * xi                    logdet sum log|D_i|
//   TRIL  h = g(h_prev) + L(h_prev) xi                      logdet sum log|L_ii|
//   NVP   affine coupling on coordinates [0, m), scale and shift computed
//         from the passive coordinates and h_prev           logdet sum s
//   CHAIN components applied in order, logdets summed
//
// g and G are tanh MLPs; the diagonal produced by G is clipped away from
// [-delta, delta]. A flow may store the parameters of its inverse map
// instead ("inverse parametrized"): then the inverse is the cheap, direct
// evaluation and the forward map is obtained by inversion.

#pragma once

#include "dssm/nets.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace dssm {

enum class FlowKind { Id, Diag, Tril, Nvp, Chain };

std::string_view to_string(FlowKind kind);

struct FlowDef {
  FlowKind kind = FlowKind::Tril;
  Index dim = 8;
  /// Hidden widths of g and G; empty means {4*dim, 4*dim}.
  std::vector<Index> hidden;
  double delta = 0.1;
  /// NVP: number of active (transformed) leading coordinates.
  Index mask = 1;
  std::vector<Index> nvp_hidden{8, 8};
  std::vector<FlowDef> components;
  bool inverse_parametrized = false;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  std::vector<Index> mlp_hidden() const;

  /// Parses "id", "diag", "tril", "2xtril", "nvp3", "diag+tril",
  /// "nvp2+nvp3+nvp4", ... Several components form a CHAIN.
  static FlowDef parse(std::string_view spec, Index dim, double delta = 0.1);
  /// Inverse of parse (round-trips through parse for the same dim/delta).
  std::string spec() const;
};

/// Value-level result of a flow evaluation.
struct FlowStep {
  Vec out;
  double logdet = 0.0;
};

/// Graph-level result: out is h (forward) or xi (inverse); logdet is always
/// log|det dF/dxi| of the forward map at the noise point.
struct FlowStepVar {
  Var out;
  Var logdet;
};

class Flow {
 public:
  Flow() = default;
  /// Creates and registers fresh parameters under prefix.
  Flow(FlowDef def, ParamStore& params, const std::string& prefix, RngStream& rng);
  /// Binds to parameters already in the store.
  Flow(FlowDef def, const ParamStore& params, const std::string& prefix);

  const FlowDef& def() const { return def_; }
  Index dim() const { return def_.dim; }

  FlowStepVar forward(Tape& tape, Var h_prev, Var xi) const;
  FlowStepVar inverse(Tape& tape, Var h_prev, Var h) const;

  FlowStep forward(const ParamStore& params, const Vec& h_prev, const Vec& xi) const;
  FlowStep inverse(const ParamStore& params, const Vec& h_prev, const Vec& h) const;

 private:
  // The map whose parameters are stored.
  FlowStepVar direct(Tape& tape, Var h_prev, Var x) const;
  FlowStepVar solve(Tape& tape, Var h_prev, Var y) const;
  void build(ParamStore* params, const ParamStore& view, const std::string& prefix,
             RngStream* rng);

  FlowDef def_;
  Mlp shift_;  // g, or NVP t
  Mlp scale_;  // G, or NVP s
  std::vector<Flow> components_;
};

}  // namespace dssm
