// SPDX-License-Identifier: Apache-2.0
#include "dssm/baseline.hpp"

#include <cmath>

namespace dssm {

void BaselineConfig::validate() const {
  if (d < 1 || d_emb < 1) throw ConfigError("baseline: dimensions must be >= 1");
  if (symbols < 1) throw ConfigError("baseline: alphabet must contain at least end-of-word");
  if (t_max < 2) throw ConfigError("baseline: t_max must be >= 2");
}

BaselineModel::BaselineModel(BaselineConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
  config_.validate();
  RngStream rng(init_seed, "init/baseline");
  gru_ = GruParams::create(params_, "gru", config_.d_emb, config_.d, rng);
  embedding_ = params_.add("embedding", uniform_init(config_.symbols + 1, config_.d_emb, rng));
  projection_ = params_.add("projection", uniform_init(config_.symbols, config_.d, rng));
  bias_ = params_.add("bias", Mat::Zero(config_.symbols, 1));
  h0_ = params_.add("h0", Mat::Zero(config_.d, 1));
}

BaselineModel::BaselineModel(BaselineConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  bind();
}

void BaselineModel::bind() {
  gru_ = GruParams::bind(params_, "gru");
  embedding_ = params_.id("embedding");
  projection_ = params_.id("projection");
  bias_ = params_.id("bias");
  h0_ = params_.id("h0");
  if (params_.value(embedding_).rows() != config_.symbols + 1 ||
      params_.value(projection_).rows() != config_.symbols || gru_.hidden_dim != config_.d ||
      gru_.input_dim != config_.d_emb)
    throw ConfigError("baseline: parameter shapes do not match the configuration");
}

namespace {

Var input_embedding(Tape& tape, const BaselineModel& m, int symbol) {
  return row(tape.param(m.embedding()), symbol);
}

Var logits_at(Tape& tape, const BaselineModel& m, Var h) {
  return affine(tape.param(m.projection()), h, tape.param(m.bias()));
}

void check_word(const BaselineModel& m, std::span<const int> word) {
  if (word.empty() || word.back() != m.config().eow())
    throw ShapeError("baseline: word must end with end-of-word");
  for (int s : word)
    if (s < 0 || s >= m.config().symbols) throw ShapeError("baseline: unknown symbol id");
}

}  // namespace

Var teacher_forced_nll(Tape& tape, const BaselineModel& model, std::span<const int> word) {
  check_word(model, word);
  Var h = tape.param(model.h0());
  int prev = model.config().start();
  std::vector<Var> terms;
  terms.reserve(word.size());
  for (int w : word) {
    h = gru_step(tape, model.gru(), input_embedding(tape, model, prev), h);
    terms.push_back(log_softmax_at(logits_at(tape, model, h), w));
    prev = w;
  }
  return -add_n(terms);
}

double teacher_forced_loss(const BaselineModel& model, std::span<const int> word) {
  Tape tape(&model.params(), false);
  return teacher_forced_nll(tape, model, word).scalar() / kLn2;
}

double word_log2prob(const BaselineModel& model, std::span<const int> word) {
  check_word(model, word);
  Tape tape(&model.params(), false);
  Var h = tape.param(model.h0());
  int prev = model.config().start();
  double lp = 0.0;
  for (int w : word) {
    h = gru_step(tape, model.gru(), input_embedding(tape, model, prev), h);
    const Vec logp = log_softmax(Vec(logits_at(tape, model, h).value().col(0)));
    lp += logp(w);
    prev = w;
  }
  return lp / kLn2;
}

std::vector<GeneratedWord> generate_baseline(const BaselineModel& model, RngStream& rng,
                                             std::size_t n_words, GenerateOptions opts) {
  const auto& cfg = model.config();
  std::vector<GeneratedWord> out;
  out.reserve(n_words);
  for (std::size_t i = 0; i < n_words; ++i) {
    Tape tape(&model.params(), false);
    Var h = tape.param(model.h0());
    int prev = cfg.start();
    GeneratedWord g;
    g.truncated = true;
    for (int t = 0; t < cfg.t_max; ++t) {
      h = gru_step(tape, model.gru(), input_embedding(tape, model, prev), h);
      const Vec p = softmax(Vec(logits_at(tape, model, h).value().col(0)));
      int w = 0;
      if (opts.argmax) {
        Index k = 0;
        p.maxCoeff(&k);
        w = static_cast<int>(k);
      } else {
        w = static_cast<int>(
            rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))));
      }
      if (w == cfg.eow()) {
        g.truncated = false;
        break;
      }
      g.symbols.push_back(w);
      prev = w;
    }
    const auto cap = static_cast<std::size_t>(cfg.t_max - 1);
    if (g.truncated && g.symbols.size() > cap) g.symbols.resize(cap);
    out.push_back(std::move(g));
  }
  return out;
}

StepStats train_baseline_step(BaselineModel& model, const TrainConfig& cfg, AdamState& adam,
                              const std::vector<SymbolSeq>& batch) {
  const long step = adam.step + 1;
  if (batch.empty()) throw ConfigError("train_baseline_step: empty batch");
  GradList grads = model.params().zeros_like();
  StepStats stats;
  try {
    for (const auto& word : batch) {
      Tape tape(&model.params());
      Var nll = teacher_forced_nll(tape, model, word);
      if (!std::isfinite(nll.scalar())) throw NumericError("non-finite likelihood");
      stats.mean_elbo -= nll.scalar();
      tape.backward(nll).accumulate(grads);
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads) g *= scale;
    stats.grad_norm = clip_grad_norm(grads, cfg.clip_norm);
    if (!std::isfinite(stats.grad_norm)) throw NumericError("non-finite gradient");
    adam_step(model.params(), grads, adam);
  } catch (const NumericError& e) {
    throw NumericError("training aborted at step " + std::to_string(step) + " (baseline): " + e.what(),
                       step);
  }
  stats.mean_elbo /= static_cast<double>(batch.size());
  return stats;
}

std::vector<EpochRecord> train_baseline(BaselineModel& model, const TrainConfig& cfg,
                                        AdamState& adam, const BatchSource& batches, int epochs,
                                        RngStream& rng, int first_epoch,
                                        const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> log;
  for (int e = 0; e < epochs; ++e) {
    EpochRecord rec;
    rec.epoch = first_epoch + e;
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      StepStats st = train_baseline_step(model, cfg, adam, batches(rng));
      rec.mean_elbo_nats += st.mean_elbo;
      rec.grad_norm += st.grad_norm;
    }
    const double n = std::max(1, cfg.steps_per_epoch);
    rec.mean_elbo_nats /= n;
    rec.grad_norm /= n;
    rec.mean_elbo_bits = rec.mean_elbo_nats / kLn2;
    rec.step = adam.step;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

}  // namespace dssm
