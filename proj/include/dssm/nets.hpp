// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks: tanh MLPs, the GRU cell, symbol embeddings with the
// softmax observation model, and the diagonal Gaussian proposal head.

#pragma once

#include "dssm/numcore.hpp"
#include "dssm/rng.hpp"
#include "dssm/tape.hpp"

#include <string>
#include <vector>

namespace dssm {

/// Weights drawn uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
Mat uniform_init(Index rows, Index cols, RngStream& rng);

/// Fully connected net: tanh on hidden layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, hidden..., out}; registers prefix.l<i>.W / prefix.l<i>.b.
  Mlp(ParamStore& params, const std::string& prefix, std::vector<Index> sizes, RngStream& rng);
  /// Rebinds to parameters already present in the store.
  Mlp(const ParamStore& params, const std::string& prefix, std::vector<Index> sizes);

  Var operator()(Tape& tape, Var x) const;

  Index in_dim() const { return sizes_.front(); }
  Index out_dim() const { return sizes_.back(); }
  std::size_t layers() const { return weights_.size(); }
  ParamId weight(std::size_t layer) const { return weights_.at(layer); }
  ParamId bias(std::size_t layer) const { return biases_.at(layer); }

 private:
  std::vector<Index> sizes_;
  std::vector<ParamId> weights_;
  std::vector<ParamId> biases_;
};

// ---------------------------------------------------------------------------

struct GruParams {
  Index input_dim = 0;
  Index hidden_dim = 0;
  ParamId Wr, Wz, Wn;
  ParamId Ur, Uz, Un;
  ParamId br, bz, bn;

  static GruParams create(ParamStore& params, const std::string& prefix, Index input_dim,
                          Index hidden_dim, RngStream& rng);
  static GruParams bind(const ParamStore& params, const std::string& prefix);
};

/// r = s(Wr x + Ur h + br); z = s(Wz x + Uz h + bz);
/// n = tanh(Wn x + r*(Un h) + bn); h' = (1-z)*n + z*h.
Var gru_step(Tape& tape, const GruParams& p, Var x, Var h);

// ---------------------------------------------------------------------------

struct ObservationParams {
  Index symbols = 0;
  Index state_dim = 0;
  Index embedding_dim = 0;
  bool tie_embeddings = false;
  ParamId projection;  // symbols x state_dim (absent when tied)
  ParamId bias;        // symbols x 1
  ParamId embedding;   // symbols x embedding_dim

  static ObservationParams create(ParamStore& params, const std::string& prefix, Index symbols,
                                  Index state_dim, Index embedding_dim, bool tie_embeddings,
                                  RngStream& rng);
  static ObservationParams bind(const ParamStore& params, const std::string& prefix,
                                bool tie_embeddings);
};

Var observation_logits(Tape& tape, const ObservationParams& p, Var h);
/// log softmax(proj h + b)[w]. Throws ShapeError for an unknown symbol id.
Var observation_logprob(Tape& tape, const ObservationParams& p, Var h, int w);
/// Embedding row of symbol w as a column vector.
Var embed(Tape& tape, const ObservationParams& p, int w);

/// Log-probabilities of every symbol at state h, without a tape.
Vec observation_log_probs(const ParamStore& params, const ObservationParams& p, const Vec& h);

// ---------------------------------------------------------------------------

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct ProposalParams {
  Index state_dim = 0;
  Mlp net;  // conditioning -> (mu, log sigma^2)

  static ProposalParams create(ParamStore& params, const std::string& prefix, Index cond_dim,
                               Index state_dim, Index hidden, RngStream& rng);
  static ProposalParams bind(const ParamStore& params, const std::string& prefix, Index cond_dim,
                             Index state_dim, Index hidden);
};

struct GaussianSample {
  Var xi;
  Var log_q;
  Var mu;
  Var sigma;
};

/// Reparametrized draw xi = mu + sigma*eps with eps supplied by the caller.
GaussianSample propose_gaussian(Tape& tape, const ProposalParams& p, Var cond, const Vec& eps);
GaussianSample propose_gaussian(Tape& tape, const ProposalParams& p, Var cond, RngStream& rng);

}  // namespace dssm
