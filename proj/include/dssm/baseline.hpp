// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive character GRU trained with teacher forcing. The hidden and
// embedding sizes mirror the state space model's d and d_emb.

#pragma once

#include "dssm/nets.hpp"
#include "dssm/ssm.hpp"

namespace dssm {

struct BaselineConfig {
  Index d = 8;
  Index d_emb = 8;
  /// |Sigma| including end-of-word (the last id).
  Index symbols = 27;
  int t_max = 13;

  void validate() const;
  int eow() const { return static_cast<int>(symbols) - 1; }
  /// Row of the input embedding table used as the start symbol.
  int start() const { return static_cast<int>(symbols); }
};

class BaselineModel {
 public:
  BaselineModel(BaselineConfig config, std::uint64_t init_seed);
  BaselineModel(BaselineConfig config, ParamStore params);

  const BaselineConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const GruParams& gru() const { return gru_; }
  ParamId embedding() const { return embedding_; }    // (symbols + 1) x d_emb
  ParamId projection() const { return projection_; }  // symbols x d
  ParamId bias() const { return bias_; }
  ParamId h0() const { return h0_; }

 private:
  void bind();

  BaselineConfig config_;
  ParamStore params_;
  GruParams gru_;
  ParamId embedding_, projection_, bias_, h0_;
};

/// -sum_t log P(w_t | w_<t) in nats on the tape. The word must end with
/// end-of-word.
Var teacher_forced_nll(Tape& tape, const BaselineModel& model, std::span<const int> word);
/// Same quantity in bits, evaluated without gradients.
double teacher_forced_loss(const BaselineModel& model, std::span<const int> word);

/// Exact log2 P(w) by the chain rule, without a tape.
double word_log2prob(const BaselineModel& model, std::span<const int> word);

/// Ancestral sampling (or argmax decoding), capped at t_max symbols.
std::vector<GeneratedWord> generate_baseline(const BaselineModel& model, RngStream& rng,
                                             std::size_t n_words, GenerateOptions opts = {});

/// One Adam step on mean teacher-forced NLL. mean_elbo in the returned
/// stats holds the mean log-likelihood (nats) for a uniform log format.
StepStats train_baseline_step(BaselineModel& model, const TrainConfig& cfg, AdamState& adam,
                              const std::vector<SymbolSeq>& batch);

std::vector<EpochRecord> train_baseline(BaselineModel& model, const TrainConfig& cfg,
                                        AdamState& adam, const BatchSource& batches, int epochs,
                                        RngStream& rng, int first_epoch = 1,
                                        const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dssm
