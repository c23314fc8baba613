// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: Monte-Carlo marginal word probabilities over shared prior
// trajectories, cross-entropy, coverage, per-position mutual information
// between step noise and emitted symbol, and Witten-Bell character n-grams.

#pragma once

#include "dssm/corpus.hpp"
#include "dssm/ssm.hpp"

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace dssm {

/// Estimates below 2^-40 are replaced by the floor and flagged.
inline constexpr double kLog2ProbFloor = -40.0;

struct MarginalEstimate {
  SymbolSeq word;  // letters followed by end-of-word
  double log2_prob = 0.0;
  double prob = 0.0;
  long K = 0;
  bool floored = false;
};

MarginalEstimate floored_estimate(SymbolSeq word, double log2_prob, long K);

/// P(w) ~ (1/K) sum_k prod_t P(w_t | h_t^(k)), all words sharing the same K
/// prior trajectories. Words must end with end-of-word; words longer than
/// t_max have zero probability under the model and come back floored.
std::vector<MarginalEstimate> estimate_marginals(const Model& model,
                                                 std::span<const SymbolSeq> words, long K,
                                                 RngStream& rng);

/// log2 P(w | h_1..h_T) of one word under one trajectory of observation
/// log-probability tables (nats, one column per step).
double word_log2prob_given(const std::vector<Vec>& step_log_probs, std::span<const int> word);

enum class EntropyUnit { Bits, Nats };

struct CrossEntropy {
  double value = 0.0;
  EntropyUnit unit = EntropyUnit::Bits;
  std::size_t floored = 0;
};

/// -sum_w P_data(w) log P_hat(w). Throws ConfigError when a support word has
/// no estimate or the data distribution does not sum to 1.
CrossEntropy cross_entropy(const std::map<std::string, double>& data,
                           const std::map<std::string, MarginalEstimate>& model,
                           EntropyUnit unit = EntropyUnit::Bits);

/// Keys estimates by their spelling.
std::map<std::string, MarginalEstimate> by_word(const Alphabet& alphabet,
                                                const std::vector<MarginalEstimate>& estimates);

struct Coverage {
  double in_vocab = 0.0;         // fraction of generated tokens found in V
  double unique_in_vocab = 0.0;  // fraction of distinct generated words found in V
};

Coverage coverage_metrics(std::span<const std::string> generated, const std::set<std::string>& vocab);

// ---------------------------------------------------------------------------

/// Entropy in bits; zero-probability entries contribute nothing.
double entropy_bits(const Vec& probs);

struct MiReport {
  std::vector<double> per_position;  // I(t) in bits, t = 1..T
  std::vector<double> symbol_entropy;  // H[w_t | h_t] in bits
  double mean = 0.0;                 // over t = 1..T
  double mean_realized = 0.0;        // over positions up to each sampled word's end
  int outer = 0;
  int inner = 0;
};

/// I(t) = H[w_t | h_{t-1}] - H[w_t | xi_t, h_{t-1}] for one position, with
/// prefixes drawn from the prior. Inner draws come in antithetic pairs.
double mutual_information(const Model& model, int t, int outer_M, int inner_K, RngStream& rng);

/// All positions 1..T (T defaults to t_max) from one set of outer rollouts.
MiReport mutual_information_profile(const Model& model, int outer_M, int inner_K, RngStream& rng,
                                    int T = 0);

// ---------------------------------------------------------------------------

/// Character n-gram model with Witten-Bell interpolated smoothing.
/// Symbols are 0..vocab-1; padding uses the extra id `vocab`.
class WittenBell {
 public:
  WittenBell(int order, int vocab);

  int order() const { return order_; }
  int vocab() const { return vocab_; }
  int boundary() const { return vocab_; }

  /// Adds one word (ending in end-of-word), weighted by count.
  void add(std::span<const int> word, long count = 1);

  /// P(w | context) where context holds the preceding symbols (any length;
  /// only the last order-1 are used, missing ones are boundary padding).
  double prob(std::span<const int> context, int w) const;

  long count(std::span<const int> context) const;
  long count(std::span<const int> context, int w) const;
  /// Number of distinct symbols seen after the context.
  long distinct(std::span<const int> context) const;
  /// Every context of length order-1 observed in training (padded).
  std::vector<std::vector<int>> contexts() const;

 private:
  struct Counts {
    long total = 0;
    std::map<int, long> next;
  };
  int order_;
  int vocab_;
  std::map<std::vector<int>, Counts> table_;
};

/// Throws ConfigError for n < 1.
WittenBell wb_train(const Lexicon& corpus, int n);
WittenBell wb_train(std::span<const SymbolSeq> words, int n, int vocab);

/// 2^(-mean log2 P) over every symbol of every word, end-of-word included.
double ngram_perplexity(const WittenBell& model, std::span<const SymbolSeq> words);

}  // namespace dssm
