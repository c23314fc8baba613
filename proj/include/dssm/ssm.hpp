// SPDX-License-Identifier: Apache-2.0
//
// Non-autoregressive state space model over symbol sequences.
//
// Generative model: h_t = F_g(h_{t-1}, xi_t), xi_t ~ N(0, I), w_t ~ P(.|h_t).
// Inference model: a backward GRU digests w_{t:T} into a_t; a diagonal
// Gaussian q(xi_t | a_t, ...) proposes noise that F_q maps to h_t.
//
// Per-step bound, with zeta_t = F_g^{-1}(h_{t-1}, h_t):
//   L_t = log P(w_t|h_t) + log r(zeta_t) - log q(xi_t) + logdet_q - logdet_g
// where r is the standard normal density and logdet_* are the forward-map
// log-Jacobian determinants at xi_t and zeta_t respectively.

#pragma once

#include "dssm/flows.hpp"
#include "dssm/nets.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace dssm {

/// Symbol id sequence; the last entry of a training word is end-of-word.
using SymbolSeq = std::vector<int>;

enum class ProposalConditioning { BackwardOnly, BackwardPlusPrevState };
enum class RnnMode { Backward, Bidirectional };

struct ModelConfig {
  Index d = 8;
  Index d_emb = 8;
  /// |Sigma| including end-of-word, which is always the last id.
  Index symbols = 27;
  FlowDef fg = FlowDef::parse("tril", 8);
  FlowDef fq = FlowDef::parse("tril", 8);
  /// Use F_g's parameters for F_q as well.
  bool shared_flow = false;
  ProposalConditioning conditioning = ProposalConditioning::BackwardOnly;
  RnnMode rnn = RnnMode::Backward;
  /// Importance samples per step (1 = plain single-sample bound).
  int K = 1;
  /// Proposal additionally conditions on a state simulated from F_g.
  bool peek = false;
  int t_max = 13;
  bool tie_embeddings = false;
  /// Hidden width of the proposal MLP (0 = 4d).
  Index proposal_hidden = 0;
  /// Cut the gradient through the resampled state as well as the choice.
  bool detach_resampled = false;

  void validate() const;
  int eow() const { return static_cast<int>(symbols) - 1; }
  Index context_dim() const { return rnn == RnnMode::Bidirectional ? 2 * d : d; }
  Index proposal_input_dim() const;
  Index proposal_width() const { return proposal_hidden > 0 ? proposal_hidden : 4 * d; }
};

/// All learned parameters plus the structure that interprets them.
class Model {
 public:
  /// Fresh parameters drawn from a stream derived from init_seed.
  Model(ModelConfig config, std::uint64_t init_seed);
  /// Binds to an existing parameter store (e.g. loaded from a checkpoint).
  Model(ModelConfig config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  const Flow& fg() const { return fg_; }
  const Flow& fq() const { return config_.shared_flow ? fg_ : fq_; }
  const GruParams& backward_rnn() const { return rnn_b_; }
  const GruParams& forward_rnn() const { return rnn_f_; }
  const ObservationParams& observation() const { return obs_; }
  const ProposalParams& proposal() const { return proposal_; }
  ParamId h0() const { return h0_; }
  ParamId backward_init() const { return a_init_; }
  ParamId forward_init() const { return f_init_; }

 private:
  void bind();

  ModelConfig config_;
  ParamStore params_;
  Flow fg_, fq_;
  GruParams rnn_b_, rnn_f_;
  ObservationParams obs_;
  ProposalParams proposal_;
  ParamId h0_, a_init_, f_init_;
};

// ---------------------------------------------------------------------------

struct TrajectoryRow {
  Vec xi;
  Vec h;
  double log_q = 0.0;
  double logdet_q = 0.0;
  double logdet_g = 0.0;
  double log_r = 0.0;
  double log_obs = 0.0;
  double contribution = 0.0;
};

using Trajectory = std::vector<TrajectoryRow>;

struct StepResult {
  Var contribution;
  Var h;
  TrajectoryRow row;
};

struct IwaeStep {
  std::vector<Vec> candidates;
  Vec log_weights;
  Vec normalized;
  std::size_t selected = 0;
};

struct IwaeStepResult {
  Var contribution;
  Var h;
  IwaeStep info;
};

struct SequenceResult {
  Var elbo;
  Trajectory trajectory;
  /// Per step: variance of normalized importance weights (0 when K = 1).
  std::vector<double> weight_variance;
};

/// Backward contexts a_1..a_T (concatenated with forward states when
/// bidirectional). Throws ShapeError on an empty word.
std::vector<Var> backward_context(Tape& tape, const Model& model, std::span<const int> word);

/// Single-sample bound contribution for one step.
StepResult elbo_step(Tape& tape, const Model& model, Var h_prev, Var a_t, int w_t,
                     RngStream& rng);

/// Importance-weighted one-step-horizon contribution with K candidates,
/// followed by resampling of the forwarded state.
IwaeStepResult iwae_step(Tape& tape, const Model& model, Var h_prev, Var a_t, int w_t,
                         RngStream& rng, int K);

/// Sum of elbo_step over the word, states chained from h0.
SequenceResult elbo_sequence(Tape& tape, const Model& model, std::span<const int> word,
                             RngStream& rng);
/// Sum of iwae_step over the word.
SequenceResult iwae_sequence(Tape& tape, const Model& model, std::span<const int> word,
                             RngStream& rng, int K);
/// The training objective selected by config.K.
SequenceResult objective_sequence(Tape& tape, const Model& model, std::span<const int> word,
                                  RngStream& rng);

// ---------------------------------------------------------------------------
// Generation

/// States h_1..h_{t_max} rolled out from h0 under F_g with fresh noise.
/// Consumes exactly t_max * d normals from rng.
std::vector<Vec> sample_states(const Model& model, RngStream& rng);

/// Picks a symbol given per-step log-probabilities.
using SymbolSampler = std::function<int(const Vec& log_probs)>;

struct GeneratedWord {
  SymbolSeq symbols;  // letters only, end-of-word stripped
  bool truncated = false;
};

GeneratedWord emit_word(const Model& model, const std::vector<Vec>& states,
                        const SymbolSampler& sampler);

struct GenerateOptions {
  bool argmax = false;
};

/// Noise for states comes from `noise`; symbol draws from `symbols`.
std::vector<GeneratedWord> generate(const Model& model, RngStream& noise, RngStream& symbols,
                                    std::size_t n_words, GenerateOptions opts = {});

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  AdamConfig adam;
  int batch = 64;
  double clip_norm = 5.0;
  int steps_per_epoch = 100;
};

struct StepStats {
  double mean_elbo = 0.0;  // nats per word
  double weight_variance = 0.0;
  double grad_norm = 0.0;
};

/// Draws the next minibatch of words.
using BatchSource = std::function<std::vector<SymbolSeq>(RngStream& rng)>;

/// One Adam step on -mean(objective) over the batch.
/// NumericError carries the optimizer step index.
StepStats train_step(Model& model, const TrainConfig& cfg, AdamState& adam,
                     const std::vector<SymbolSeq>& batch, RngStream& rng);

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double mean_elbo_nats = 0.0;
  double mean_elbo_bits = 0.0;
  double weight_variance = 0.0;
  double grad_norm = 0.0;
};

/// Runs `epochs` epochs of `cfg.steps_per_epoch` steps, invoking on_epoch
/// after each one (checkpointing, extra metrics).
std::vector<EpochRecord> train(Model& model, const TrainConfig& cfg, AdamState& adam,
                               const BatchSource& batches, int epochs, RngStream& rng,
                               int first_epoch = 1,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dssm
