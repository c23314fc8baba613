// SPDX-License-Identifier: Apache-2.0
#include "dssm/ssm.hpp"

#include <algorithm>
#include <cmath>

namespace dssm {

void ModelConfig::validate() const {
  if (d < 1) throw ConfigError("model: d must be >= 1");
  if (d_emb < 1) throw ConfigError("model: embedding dimension must be >= 1");
  if (symbols < 1) throw ConfigError("model: alphabet must contain at least end-of-word");
  if (K < 1) throw ConfigError("model: K must be >= 1");
  if (t_max < 2) throw ConfigError("model: t_max must be >= 2");
  if (fg.dim != d || fq.dim != d) throw ConfigError("model: flow dimension differs from d");
  fg.validate();
  fq.validate();
  if (tie_embeddings && d != d_emb)
    throw ConfigError("model: tie_embeddings requires d == embedding dimension");
}

Index ModelConfig::proposal_input_dim() const {
  Index n = context_dim();
  if (peek) n += d;
  if (conditioning == ProposalConditioning::BackwardPlusPrevState) n += d;
  return n;
}

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  RngStream rng(init_seed, "init");
  fg_ = Flow(config_.fg, params_, "fg", rng);
  if (!config_.shared_flow) fq_ = Flow(config_.fq, params_, "fq", rng);
  rnn_b_ = GruParams::create(params_, "rnn_b", config_.d_emb, config_.d, rng);
  if (config_.rnn == RnnMode::Bidirectional)
    rnn_f_ = GruParams::create(params_, "rnn_f", config_.d_emb, config_.d, rng);
  obs_ = ObservationParams::create(params_, "obs", config_.symbols, config_.d, config_.d_emb,
                                   config_.tie_embeddings, rng);
  proposal_ = ProposalParams::create(params_, "proposal", config_.proposal_input_dim(), config_.d,
                                     config_.proposal_width(), rng);
  h0_ = params_.add("h0", Mat::Zero(config_.d, 1));
  a_init_ = params_.add("rnn_b.init", Mat::Zero(config_.d, 1));
  if (config_.rnn == RnnMode::Bidirectional)
    f_init_ = params_.add("rnn_f.init", Mat::Zero(config_.d, 1));
}

Model::Model(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  bind();
}

void Model::bind() {
  fg_ = Flow(config_.fg, params_, "fg");
  if (!config_.shared_flow) fq_ = Flow(config_.fq, params_, "fq");
  rnn_b_ = GruParams::bind(params_, "rnn_b");
  if (config_.rnn == RnnMode::Bidirectional) rnn_f_ = GruParams::bind(params_, "rnn_f");
  obs_ = ObservationParams::bind(params_, "obs", config_.tie_embeddings);
  if (obs_.symbols != config_.symbols)
    throw ConfigError("model: stored observation layer has " + std::to_string(obs_.symbols) +
                      " symbols, config says " + std::to_string(config_.symbols));
  proposal_ = ProposalParams::bind(params_, "proposal", config_.proposal_input_dim(), config_.d,
                                   config_.proposal_width());
  h0_ = params_.id("h0");
  a_init_ = params_.id("rnn_b.init");
  if (config_.rnn == RnnMode::Bidirectional) f_init_ = params_.id("rnn_f.init");
}

// ---------------------------------------------------------------------------

std::vector<Var> backward_context(Tape& tape, const Model& model, std::span<const int> word) {
  if (word.empty()) throw ShapeError("backward_context: empty word");
  const auto T = word.size();
  std::vector<Var> ctx(T);
  Var a = tape.param(model.backward_init());
  for (std::size_t t = T; t-- > 0;) {
    a = gru_step(tape, model.backward_rnn(), embed(tape, model.observation(), word[t]), a);
    ctx[t] = a;
  }
  if (model.config().rnn == RnnMode::Bidirectional) {
    Var f = tape.param(model.forward_init());
    for (std::size_t t = 0; t < T; ++t) {
      f = gru_step(tape, model.forward_rnn(), embed(tape, model.observation(), word[t]), f);
      ctx[t] = concat({ctx[t], f});
    }
  }
  return ctx;
}

namespace {

std::string flow_pair(const Model& m) {
  return "F_g=" + m.config().fg.spec() + ", F_q=" + m.config().fq.spec();
}

struct Candidate {
  Var h;
  Var log_obs, log_r, log_q, logdet_q, logdet_g;
  Var xi;
};

// Draws one proposal (plus the optional generative peek) and evaluates every
// term of the per-step bound. Noise order: peek noise first, then proposal.
Candidate draw_candidate(Tape& tape, const Model& model, Var h_prev, Var a_t, int w_t,
                         RngStream& rng) {
  const auto& cfg = model.config();
  std::vector<Var> cond{a_t};
  if (cfg.peek) {
    Vec eps_g = rng.normal(cfg.d);
    cond.push_back(model.fg().forward(tape, h_prev, tape.constant(eps_g)).out);
  }
  if (cfg.conditioning == ProposalConditioning::BackwardPlusPrevState) cond.push_back(h_prev);
  Var input = cond.size() == 1 ? a_t : concat(cond);

  Vec eps = rng.normal(cfg.d);
  GaussianSample q = propose_gaussian(tape, model.proposal(), input, eps);
  FlowStepVar inf = model.fq().forward(tape, h_prev, q.xi);
  FlowStepVar gen = model.fg().inverse(tape, h_prev, inf.out);

  Candidate c;
  c.h = inf.out;
  c.xi = q.xi;
  c.log_obs = observation_logprob(tape, model.observation(), inf.out, w_t);
  c.log_r = std_normal_logpdf(gen.out);
  c.log_q = q.log_q;
  c.logdet_q = inf.logdet;
  c.logdet_g = gen.logdet;
  return c;
}

TrajectoryRow make_row(const Candidate& c, double contribution) {
  TrajectoryRow r;
  r.xi = c.xi.value().col(0);
  r.h = c.h.value().col(0);
  r.log_q = c.log_q.scalar();
  r.logdet_q = c.logdet_q.scalar();
  r.logdet_g = c.logdet_g.scalar();
  r.log_r = c.log_r.scalar();
  r.log_obs = c.log_obs.scalar();
  r.contribution = contribution;
  return r;
}

}  // namespace

StepResult elbo_step(Tape& tape, const Model& model, Var h_prev, Var a_t, int w_t,
                     RngStream& rng) {
  Candidate c = draw_candidate(tape, model, h_prev, a_t, w_t, rng);
  const std::array<Var, 5> terms{c.log_obs, c.log_r, -c.log_q, c.logdet_q, -c.logdet_g};
  Var L = add_n(terms);
  const double v = L.scalar();
  if (!std::isfinite(v))
    throw NumericError("elbo_step: non-finite bound contribution (" + flow_pair(model) + ")");
  return {L, c.h, make_row(c, v)};
}

IwaeStepResult iwae_step(Tape& tape, const Model& model, Var h_prev, Var a_t, int w_t,
                         RngStream& rng, int K) {
  if (K < 1) throw ConfigError("iwae_step: K must be >= 1");
  std::vector<Var> log_w;
  std::vector<Var> states;
  IwaeStep info;
  log_w.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    Candidate c = draw_candidate(tape, model, h_prev, a_t, w_t, rng);
    // log w = log P(w|h) + log p(h|h_prev) - log q_k(h), with both state
    // densities obtained by change of variables from noise space.
    Var log_p = c.log_r - c.logdet_g;
    Var log_qh = c.log_q - c.logdet_q;
    log_w.push_back((c.log_obs + log_p) - log_qh);
    states.push_back(c.h);
    info.candidates.push_back(c.h.value().col(0));
  }
  Var stacked = concat(log_w);
  info.log_weights = stacked.value().col(0);
  if (!std::isfinite(info.log_weights.maxCoeff()))
    throw NumericError("iwae_step: no finite importance weight (" + flow_pair(model) + ")");
  const double lse = log_sum_exp(info.log_weights);
  info.normalized = (info.log_weights.array() - lse).exp().matrix();

  Var contribution = log_sum_exp(stacked) + (-std::log(static_cast<double>(K)));
  if (!std::isfinite(contribution.scalar()))
    throw NumericError("iwae_step: non-finite bound contribution (" + flow_pair(model) + ")");

  if (K > 1) {
    info.selected = rng.categorical(
        std::span<const double>(info.normalized.data(), static_cast<std::size_t>(K)));
  }
  Var h = states[info.selected];
  if (model.config().detach_resampled) h = stop_gradient(h);
  return {contribution, h, std::move(info)};
}

namespace {

double weight_variance(const Vec& normalized) {
  const double k = static_cast<double>(normalized.size());
  return (normalized.array() - 1.0 / k).square().sum() / k;
}

void check_word(const Model& model, std::span<const int> word) {
  if (word.empty()) throw ShapeError("word is empty");
  if (static_cast<int>(word.size()) > model.config().t_max)
    throw ShapeError("word longer than t_max");
  for (int w : word)
    if (w < 0 || w >= model.config().symbols)
      throw ShapeError("word contains unknown symbol id " + std::to_string(w));
}

}  // namespace

SequenceResult elbo_sequence(Tape& tape, const Model& model, std::span<const int> word,
                             RngStream& rng) {
  check_word(model, word);
  auto ctx = backward_context(tape, model, word);
  Var h = tape.param(model.h0());
  std::vector<Var> terms;
  SequenceResult out;
  for (std::size_t t = 0; t < word.size(); ++t) {
    StepResult s = elbo_step(tape, model, h, ctx[t], word[t], rng);
    terms.push_back(s.contribution);
    out.trajectory.push_back(std::move(s.row));
    out.weight_variance.push_back(0.0);
    h = s.h;
  }
  out.elbo = add_n(terms);
  return out;
}

SequenceResult iwae_sequence(Tape& tape, const Model& model, std::span<const int> word,
                             RngStream& rng, int K) {
  check_word(model, word);
  auto ctx = backward_context(tape, model, word);
  Var h = tape.param(model.h0());
  std::vector<Var> terms;
  SequenceResult out;
  for (std::size_t t = 0; t < word.size(); ++t) {
    IwaeStepResult s = iwae_step(tape, model, h, ctx[t], word[t], rng, K);
    terms.push_back(s.contribution);
    out.weight_variance.push_back(weight_variance(s.info.normalized));
    TrajectoryRow row;
    row.h = s.h.value().col(0);
    row.contribution = s.contribution.scalar();
    out.trajectory.push_back(std::move(row));
    h = s.h;
  }
  out.elbo = add_n(terms);
  return out;
}

SequenceResult objective_sequence(Tape& tape, const Model& model, std::span<const int> word,
                                  RngStream& rng) {
  if (model.config().K == 1) return elbo_sequence(tape, model, word, rng);
  return iwae_sequence(tape, model, word, rng, model.config().K);
}

// ---------------------------------------------------------------------------

std::vector<Vec> sample_states(const Model& model, RngStream& rng) {
  const auto& cfg = model.config();
  Tape tape(&model.params(), false);
  Var h = tape.param(model.h0());
  std::vector<Vec> states;
  states.reserve(static_cast<std::size_t>(cfg.t_max));
  for (int t = 0; t < cfg.t_max; ++t) {
    h = model.fg().forward(tape, h, tape.constant(rng.normal(cfg.d))).out;
    states.push_back(h.value().col(0));
  }
  return states;
}

GeneratedWord emit_word(const Model& model, const std::vector<Vec>& states,
                        const SymbolSampler& sampler) {
  GeneratedWord out;
  const int eow = model.config().eow();
  for (const Vec& h : states) {
    const int w = sampler(observation_log_probs(model.params(), model.observation(), h));
    if (w == eow) return out;
    out.symbols.push_back(w);
  }
  out.truncated = true;
  const auto cap = static_cast<std::size_t>(model.config().t_max - 1);
  if (out.symbols.size() > cap) out.symbols.resize(cap);
  return out;
}

std::vector<GeneratedWord> generate(const Model& model, RngStream& noise, RngStream& symbols,
                                    std::size_t n_words, GenerateOptions opts) {
  SymbolSampler sampler;
  if (opts.argmax) {
    sampler = [](const Vec& lp) {
      Index i = 0;
      lp.maxCoeff(&i);
      return static_cast<int>(i);
    };
  } else {
    sampler = [&symbols](const Vec& lp) {
      const Vec p = lp.array().exp();
      return static_cast<int>(
          symbols.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))));
    };
  }
  std::vector<GeneratedWord> out;
  out.reserve(n_words);
  for (std::size_t i = 0; i < n_words; ++i) out.push_back(emit_word(model, sample_states(model, noise), sampler));
  return out;
}

// ---------------------------------------------------------------------------

StepStats train_step(Model& model, const TrainConfig& cfg, AdamState& adam,
                     const std::vector<SymbolSeq>& batch, RngStream& rng) {
  const long step = adam.step + 1;
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  GradList grads = model.params().zeros_like();
  StepStats stats;
  double wv_sum = 0.0;
  std::size_t wv_n = 0;
  try {
    for (const auto& word : batch) {
      Tape tape(&model.params());
      SequenceResult r = objective_sequence(tape, model, word, rng);
      const double e = r.elbo.scalar();
      if (!std::isfinite(e)) throw NumericError("non-finite sequence bound");
      stats.mean_elbo += e;
      for (double v : r.weight_variance) {
        wv_sum += v;
        ++wv_n;
      }
      tape.backward(r.elbo).accumulate(grads);
    }
    const double scale = -1.0 / static_cast<double>(batch.size());
    for (auto& g : grads) g *= scale;
    stats.grad_norm = clip_grad_norm(grads, cfg.clip_norm);
    if (!std::isfinite(stats.grad_norm)) throw NumericError("non-finite gradient");
    adam_step(model.params(), grads, adam);
  } catch (const NumericError& e) {
    throw NumericError(std::string("training aborted at step ") + std::to_string(step) + " (" +
                           flow_pair(model) + "): " + e.what(),
                       step);
  }
  stats.mean_elbo /= static_cast<double>(batch.size());
  stats.weight_variance = wv_n ? wv_sum / static_cast<double>(wv_n) : 0.0;
  return stats;
}

std::vector<EpochRecord> train(Model& model, const TrainConfig& cfg, AdamState& adam,
                               const BatchSource& batches, int epochs, RngStream& rng,
                               int first_epoch,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> log;
  for (int e = 0; e < epochs; ++e) {
    EpochRecord rec;
    rec.epoch = first_epoch + e;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      StepStats st = train_step(model, cfg, adam, batches(rng), rng);
      rec.mean_elbo_nats += st.mean_elbo;
      rec.weight_variance += st.weight_variance;
      rec.grad_norm += st.grad_norm;
    }
    const double n = std::max(1, cfg.steps_per_epoch);
    rec.mean_elbo_nats /= n;
    rec.weight_variance /= n;
    rec.grad_norm /= n;
    rec.mean_elbo_bits = rec.mean_elbo_nats / kLn2;
    rec.step = adam.step;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

}  // namespace dssm
