// SPDX-License-Identifier: Apache-2.0
#include "dssm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dssm {

MarginalEstimate floored_estimate(SymbolSeq word, double log2_prob, long K) {
  MarginalEstimate e;
  e.word = std::move(word);
  e.K = K;
  if (!(log2_prob >= kLog2ProbFloor)) {
    e.floored = true;
    log2_prob = kLog2ProbFloor;
  }
  e.log2_prob = std::min(log2_prob, 0.0);
  e.prob = std::exp2(e.log2_prob);
  return e;
}

double word_log2prob_given(const std::vector<Vec>& step_log_probs, std::span<const int> word) {
  if (word.size() > step_log_probs.size()) return -std::numeric_limits<double>::infinity();
  double lp = 0.0;
  for (std::size_t t = 0; t < word.size(); ++t) lp += step_log_probs[t](word[t]);
  return lp / kLn2;
}

std::vector<MarginalEstimate> estimate_marginals(const Model& model,
                                                 std::span<const SymbolSeq> words, long K,
                                                 RngStream& rng) {
  if (K < 1) throw ConfigError("estimate_marginals: K must be >= 1");
  const auto& cfg = model.config();
  const auto t_max = static_cast<std::size_t>(cfg.t_max);
  std::size_t horizon = 0;
  for (const auto& w : words) {
    if (w.empty() || w.back() != cfg.eow())
      throw ShapeError("estimate_marginals: every word must end with end-of-word");
    for (int s : w)
      if (s < 0 || s >= cfg.symbols) throw ShapeError("estimate_marginals: unknown symbol id");
    if (w.size() <= t_max) horizon = std::max(horizon, w.size());
  }

  // Streaming log-sum-exp per word, in nats.
  std::vector<double> run_max(words.size(), kNegInf);
  std::vector<double> run_sum(words.size(), 0.0);
  std::vector<Vec> tables(horizon);
  for (long k = 0; k < K; ++k) {
    const auto states = sample_states(model, rng);
    for (std::size_t t = 0; t < horizon; ++t)
      tables[t] = observation_log_probs(model.params(), model.observation(), states[t]);
    for (std::size_t i = 0; i < words.size(); ++i) {
      const auto& w = words[i];
      if (w.size() > t_max) continue;
      double lp = 0.0;
      for (std::size_t t = 0; t < w.size(); ++t) lp += tables[t](w[t]);
      if (lp == kNegInf) continue;
      if (lp > run_max[i]) {
        run_sum[i] = run_sum[i] * std::exp(run_max[i] - lp) + 1.0;
        run_max[i] = lp;
      } else {
        run_sum[i] += std::exp(lp - run_max[i]);
      }
    }
  }

  std::vector<MarginalEstimate> out;
  out.reserve(words.size());
  const double log_k = std::log(static_cast<double>(K));
  for (std::size_t i = 0; i < words.size(); ++i) {
    const double ln = run_max[i] == kNegInf ? kNegInf : run_max[i] + std::log(run_sum[i]) - log_k;
    out.push_back(floored_estimate(words[i], ln / kLn2, K));
  }
  return out;
}

std::map<std::string, MarginalEstimate> by_word(const Alphabet& alphabet,
                                                const std::vector<MarginalEstimate>& estimates) {
  std::map<std::string, MarginalEstimate> out;
  for (const auto& e : estimates) out.emplace(alphabet.decode(e.word), e);
  return out;
}

CrossEntropy cross_entropy(const std::map<std::string, double>& data,
                           const std::map<std::string, MarginalEstimate>& model, EntropyUnit unit) {
  double mass = 0.0;
  for (const auto& [w, p] : data) mass += p;
  if (data.empty() || std::abs(mass - 1.0) > 1e-9)
    throw ConfigError("cross_entropy: data distribution must sum to 1");
  CrossEntropy out;
  out.unit = unit;
  double h = 0.0;
  for (const auto& [w, p] : data) {
    if (p <= 0.0) continue;
    auto it = model.find(w);
    if (it == model.end()) throw ConfigError("cross_entropy: no model estimate for '" + w + "'");
    if (it->second.floored) ++out.floored;
    h -= p * it->second.log2_prob;
  }
  out.value = unit == EntropyUnit::Bits ? h : h * kLn2;
  return out;
}

Coverage coverage_metrics(std::span<const std::string> generated, const std::set<std::string>& vocab) {
  if (generated.empty()) throw ConfigError("coverage_metrics: empty sample");
  std::size_t hits = 0;
  std::set<std::string> unique;
  for (const auto& w : generated) {
    if (vocab.count(w)) ++hits;
    unique.insert(w);
  }
  std::size_t unique_hits = 0;
  for (const auto& w : unique) unique_hits += vocab.count(w);
  return {static_cast<double>(hits) / static_cast<double>(generated.size()),
          static_cast<double>(unique_hits) / static_cast<double>(unique.size())};
}

// ---------------------------------------------------------------------------

double entropy_bits(const Vec& probs) {
  double h = 0.0;
  for (Index i = 0; i < probs.size(); ++i)
    if (probs(i) > 0.0) h -= probs(i) * std::log2(probs(i));
  return h;
}

namespace {

struct InnerResult {
  double mi = 0.0;
  double component_entropy = 0.0;
};

// Inner draws come in antithetic pairs (eps, -eps); with odd K the last draw
// is unpaired. The mixture and the mean component entropy are both written
// as first + mean(difference to first), so a model whose observations do
// not depend on the state returns exactly zero.
InnerResult inner_estimate(const Model& model, const Vec& h_prev, int K, RngStream& rng) {
  const auto& cfg = model.config();
  const auto& store = model.params();
  Vec first_p;
  double first_h = 0.0;
  Vec mix_delta = Vec::Zero(cfg.symbols);
  double h_delta = 0.0;
  Vec eps;
  for (int k = 0; k < K; ++k) {
    if (k % 2 == 0) {
      eps = rng.normal(cfg.d);
    } else {
      eps = -eps;
    }
    const Vec h = model.fg().forward(store, h_prev, eps).out;
    const Vec p = observation_log_probs(store, model.observation(), h).array().exp();
    const double hk = entropy_bits(p);
    if (k == 0) {
      first_p = p;
      first_h = hk;
    } else {
      mix_delta += p - first_p;
      h_delta += hk - first_h;
    }
  }
  const double Kd = static_cast<double>(K);
  const Vec mixture = first_p + mix_delta / Kd;
  const double mean_component = first_h + h_delta / Kd;
  return {entropy_bits(mixture) - mean_component, mean_component};
}

void check_mi_args(int M, int K) {
  if (M < 1) throw ConfigError("mutual information: outer sample count must be >= 1");
  if (K < 2) throw ConfigError("mutual information: inner sample count must be >= 2");
}

}  // namespace

double mutual_information(const Model& model, int t, int outer_M, int inner_K, RngStream& rng) {
  check_mi_args(outer_M, inner_K);
  const auto& cfg = model.config();
  if (t < 1 || t > cfg.t_max) throw ConfigError("mutual information: position out of range");
  const Vec h0 = model.params().value(model.h0()).col(0);
  double acc = 0.0;
  for (int m = 0; m < outer_M; ++m) {
    Vec h = h0;
    for (int s = 1; s < t; ++s) h = model.fg().forward(model.params(), h, rng.normal(cfg.d)).out;
    acc += inner_estimate(model, h, inner_K, rng).mi;
  }
  return acc / outer_M;
}

MiReport mutual_information_profile(const Model& model, int outer_M, int inner_K, RngStream& rng,
                                    int T) {
  check_mi_args(outer_M, inner_K);
  const auto& cfg = model.config();
  if (T <= 0) T = cfg.t_max;
  if (T > cfg.t_max) throw ConfigError("mutual information: T exceeds t_max");
  const auto& store = model.params();
  const int eow = cfg.eow();
  MiReport rep;
  rep.outer = outer_M;
  rep.inner = inner_K;
  rep.per_position.assign(static_cast<std::size_t>(T), 0.0);
  rep.symbol_entropy.assign(static_cast<std::size_t>(T), 0.0);
  double realized_sum = 0.0;
  long realized_n = 0;
  const Vec h0 = store.value(model.h0()).col(0);
  for (int m = 0; m < outer_M; ++m) {
    Vec h = h0;
    bool alive = true;
    for (int t = 1; t <= T; ++t) {
      const InnerResult r = inner_estimate(model, h, inner_K, rng);
      rep.per_position[static_cast<std::size_t>(t - 1)] += r.mi;
      rep.symbol_entropy[static_cast<std::size_t>(t - 1)] += r.component_entropy;
      if (alive) {
        realized_sum += r.mi;
        ++realized_n;
      }
      // Advance the outer rollout and sample its symbol to track word length.
      h = model.fg().forward(store, h, rng.normal(cfg.d)).out;
      const Vec p = observation_log_probs(store, model.observation(), h).array().exp();
      const auto w = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
      if (static_cast<int>(w) == eow) alive = false;
    }
  }
  double total = 0.0;
  for (std::size_t t = 0; t < rep.per_position.size(); ++t) {
    rep.per_position[t] /= outer_M;
    rep.symbol_entropy[t] /= outer_M;
    total += rep.per_position[t];
  }
  rep.mean = total / T;
  rep.mean_realized = realized_n ? realized_sum / static_cast<double>(realized_n) : 0.0;
  return rep;
}

}  // namespace dssm
