// SPDX-License-Identifier: Apache-2.0
//
// Word corpora: alphabet, filtered lexicon with unigram distribution, the
// token- and type-level train/test splits, frequency-proportional minibatch
// sampling, and a seeded synthetic-morphology corpus generator.

#pragma once

#include "dssm/rng.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dssm {

using SymbolSeq = std::vector<int>;

/// Letters map to ids 0..n-1; end-of-word is id n.
class Alphabet {
 public:
  explicit Alphabet(std::string letters = "abcdefghijklmnopqrstuvwxyz");

  int size() const { return static_cast<int>(letters_.size()) + 1; }
  int eow() const { return static_cast<int>(letters_.size()); }
  const std::string& letters() const { return letters_; }

  /// -1 when c is not a letter of this alphabet.
  int id(char c) const { return ids_[static_cast<unsigned char>(c)]; }
  bool contains(char c) const { return id(c) >= 0; }
  bool spells(std::string_view word) const;

  /// Throws ConfigError on characters outside the alphabet.
  SymbolSeq encode(std::string_view word, bool with_eow = true) const;
  /// End-of-word symbols are skipped.
  std::string decode(std::span<const int> symbols) const;

  friend bool operator==(const Alphabet& a, const Alphabet& b) { return a.letters_ == b.letters_; }

 private:
  std::string letters_;
  std::array<int, 256> ids_{};
};

struct LexiconFilter {
  long min_count = 10;
  int min_len = 2;
  int max_len = 12;
};

class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(Alphabet alphabet) : alphabet_(std::move(alphabet)) {}

  const Alphabet& alphabet() const { return alphabet_; }
  const std::map<std::string, long>& counts() const { return counts_; }
  void add(const std::string& word, long count) { counts_[word] += count; }

  bool empty() const { return counts_.empty(); }
  std::size_t types() const { return counts_.size(); }
  long tokens() const;
  bool contains(const std::string& word) const { return counts_.count(word) > 0; }
  double probability(const std::string& word) const;
  /// Unigram word distribution (sums to 1).
  std::map<std::string, double> distribution() const;
  /// Entropy of the unigram distribution in bits.
  double entropy_bits() const;
  /// Descending count, then lexicographic.
  std::vector<std::pair<std::string, long>> sorted() const;

 private:
  Alphabet alphabet_;
  std::map<std::string, long> counts_;
};

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
/// Tokens keep inner non-letters so that the filter can reject them.
std::vector<std::string> tokenize(std::string_view text);

/// Throws ConfigError when nothing survives the filter.
Lexicon build_lexicon(std::istream& text, const LexiconFilter& filter, Alphabet alphabet = Alphabet{});
Lexicon build_lexicon(std::string_view text, const LexiconFilter& filter, Alphabet alphabet = Alphabet{});
Lexicon filter_counts(const std::map<std::string, long>& counts, const LexiconFilter& filter,
                      Alphabet alphabet = Alphabet{});

/// One `word<TAB>count` line per word in sorted() order.
void write_lexicon(std::ostream& os, const Lexicon& lex);
Lexicon read_lexicon(std::istream& is, Alphabet alphabet = Alphabet{});
void save_lexicon(const std::string& path, const Lexicon& lex);
Lexicon load_lexicon(const std::string& path, Alphabet alphabet = Alphabet{});

enum class SplitMode { Token, Type };

struct SplitSpec {
  SplitMode mode = SplitMode::Token;
  double test_fraction = 0.10;
  std::uint64_t seed = 1;
};

struct Split {
  Lexicon train;
  Lexicon test;
};

/// Token mode: every occurrence goes to test with probability test_fraction.
/// Type mode: round(test_fraction * types) word types, chosen uniformly and
/// regardless of frequency, go to test with all their occurrences.
Split split(const Lexicon& lex, const SplitSpec& spec);

/// Draws words with probability proportional to their count. Each emitted
/// sequence ends with end-of-word.
class BatchSampler {
 public:
  explicit BatchSampler(const Lexicon& lex);
  const SymbolSeq& draw(RngStream& rng) const;
  std::vector<SymbolSeq> next(std::size_t batch_size, RngStream& rng) const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::vector<SymbolSeq> encoded_;
  std::vector<double> cumulative_;
};

struct SyntheticCorpusSpec {
  std::uint64_t seed = 7;
  std::size_t types = 500;
  /// count(rank r) = floor_count + round(head_count / r^zipf_exponent)
  double head_count = 4000.0;
  double zipf_exponent = 1.0;
  long floor_count = 10;
};

/// Word-type inventory built from a consonant-vowel syllable grammar with
/// suffix morphology, with Zipf-like counts. Deterministic per seed.
std::map<std::string, long> synthetic_counts(const SyntheticCorpusSpec& spec);
/// Running text realizing synthetic_counts in a seeded shuffled order.
std::string synthetic_text(const SyntheticCorpusSpec& spec);

}  // namespace dssm
