// SPDX-License-Identifier: Apache-2.0
#include "dssm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dssm {

Alphabet::Alphabet(std::string letters) : letters_(std::move(letters)) {
  ids_.fill(-1);
  for (std::size_t i = 0; i < letters_.size(); ++i) {
    auto& slot = ids_[static_cast<unsigned char>(letters_[i])];
    if (slot >= 0) throw ConfigError("alphabet: duplicate letter '" + std::string(1, letters_[i]) + "'");
    slot = static_cast<int>(i);
  }
}

bool Alphabet::spells(std::string_view word) const {
  return std::all_of(word.begin(), word.end(), [this](char c) { return contains(c); });
}

SymbolSeq Alphabet::encode(std::string_view word, bool with_eow) const {
  SymbolSeq out;
  out.reserve(word.size() + 1);
  for (char c : word) {
    const int i = id(c);
    if (i < 0) throw ConfigError("alphabet: character '" + std::string(1, c) + "' in '" +
                                 std::string(word) + "' is not in the alphabet");
    out.push_back(i);
  }
  if (with_eow) out.push_back(eow());
  return out;
}

std::string Alphabet::decode(std::span<const int> symbols) const {
  std::string out;
  for (int s : symbols)
    if (s >= 0 && s < eow()) out.push_back(letters_[static_cast<std::size_t>(s)]);
  return out;
}

// ---------------------------------------------------------------------------

long Lexicon::tokens() const {
  long n = 0;
  for (const auto& [w, c] : counts_) n += c;
  return n;
}

double Lexicon::probability(const std::string& word) const {
  auto it = counts_.find(word);
  if (it == counts_.end()) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(tokens());
}

std::map<std::string, double> Lexicon::distribution() const {
  std::map<std::string, double> out;
  const double total = static_cast<double>(tokens());
  for (const auto& [w, c] : counts_) out.emplace(w, static_cast<double>(c) / total);
  return out;
}

double Lexicon::entropy_bits() const {
  double h = 0.0;
  for (const auto& [w, p] : distribution()) h -= p * std::log2(p);
  return h;
}

std::vector<std::pair<std::string, long>> Lexicon::sorted() const {
  std::vector<std::pair<std::string, long>> out(counts_.begin(), counts_.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (i < n) {
    while (i < n && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < n && !is_space(text[j])) ++j;
    std::size_t a = i, b = j;
    while (a < b && is_punct(text[a])) ++a;
    while (b > a && is_punct(text[b - 1])) --b;
    if (b > a) {
      std::string tok(text.substr(a, b - a));
      for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

Lexicon filter_counts(const std::map<std::string, long>& counts, const LexiconFilter& filter,
                      Alphabet alphabet) {
  if (filter.min_count < 1 || filter.min_len < 1 || filter.max_len < filter.min_len)
    throw ConfigError("lexicon: filter parameters must be positive and min_len <= max_len");
  Lexicon lex(std::move(alphabet));
  for (const auto& [w, c] : counts) {
    const auto len = static_cast<int>(w.size());
    if (len < filter.min_len || len > filter.max_len) continue;
    if (c < filter.min_count) continue;
    if (!lex.alphabet().spells(w)) continue;
    lex.add(w, c);
  }
  if (lex.empty()) throw ConfigError("lexicon: no word survives the filter");
  return lex;
}

Lexicon build_lexicon(std::string_view text, const LexiconFilter& filter, Alphabet alphabet) {
  std::map<std::string, long> counts;
  for (auto& tok : tokenize(text)) counts[std::move(tok)] += 1;
  return filter_counts(counts, filter, std::move(alphabet));
}

Lexicon build_lexicon(std::istream& text, const LexiconFilter& filter, Alphabet alphabet) {
  std::map<std::string, long> counts;
  std::string line;
  while (std::getline(text, line))
    for (auto& tok : tokenize(line)) counts[std::move(tok)] += 1;
  return filter_counts(counts, filter, std::move(alphabet));
}

void write_lexicon(std::ostream& os, const Lexicon& lex) {
  for (const auto& [w, c] : lex.sorted()) os << w << '\t' << c << '\n';
}

Lexicon read_lexicon(std::istream& is, Alphabet alphabet) {
  Lexicon lex(std::move(alphabet));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ConfigError("lexicon line " + std::to_string(lineno) + ": expected word<TAB>count");
    std::string word = line.substr(0, tab);
    long count = 0;
    try {
      std::size_t used = 0;
      count = std::stol(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("lexicon line " + std::to_string(lineno) + ": bad count");
    }
    if (!lex.alphabet().spells(word))
      throw ConfigError("lexicon line " + std::to_string(lineno) + ": '" + word +
                        "' is not spelled in the alphabet");
    lex.add(word, count);
  }
  return lex;
}

void save_lexicon(const std::string& path, const Lexicon& lex) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_lexicon(os, lex);
}

Lexicon load_lexicon(const std::string& path, Alphabet alphabet) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return read_lexicon(is, std::move(alphabet));
}

// ---------------------------------------------------------------------------

Split split(const Lexicon& lex, const SplitSpec& spec) {
  if (lex.empty()) throw ConfigError("split: empty lexicon");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction <= 1.0))
    throw ConfigError("split: test fraction must lie in [0, 1]");
  Split out{Lexicon(lex.alphabet()), Lexicon(lex.alphabet())};
  if (spec.mode == SplitMode::Token) {
    RngStream rng(spec.seed, "split/token");
    for (const auto& [w, c] : lex.counts()) {
      long test = 0;
      for (long i = 0; i < c; ++i)
        if (rng.uniform() < spec.test_fraction) ++test;
      if (c - test > 0) out.train.add(w, c - test);
      if (test > 0) out.test.add(w, test);
    }
    return out;
  }
  RngStream rng(spec.seed, "split/type");
  std::vector<std::string> types;
  for (const auto& [w, c] : lex.counts()) types.push_back(w);
  for (std::size_t i = types.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(types[i - 1], types[j]);
  }
  const auto n_test = static_cast<std::size_t>(
      std::llround(spec.test_fraction * static_cast<double>(types.size())));
  std::set<std::string> test_types(types.begin(), types.begin() + static_cast<long>(n_test));
  for (const auto& [w, c] : lex.counts()) (test_types.count(w) ? out.test : out.train).add(w, c);
  return out;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(const Lexicon& lex) {
  if (lex.empty()) throw ConfigError("batch sampler: empty lexicon");
  double acc = 0.0;
  for (const auto& [w, c] : lex.counts()) {
    words_.push_back(w);
    encoded_.push_back(lex.alphabet().encode(w));
    acc += static_cast<double>(c);
    cumulative_.push_back(acc);
  }
}

const SymbolSeq& BatchSampler::draw(RngStream& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return encoded_[static_cast<std::size_t>(it - cumulative_.begin())];
}

std::vector<SymbolSeq> BatchSampler::next(std::size_t batch_size, RngStream& rng) const {
  if (batch_size < 1) throw ConfigError("batch sampler: batch size must be >= 1");
  std::vector<SymbolSeq> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(draw(rng));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<const char*, 24> kOnsets{"",   "b",  "d",  "f",  "g",  "h",  "k",  "l",
                                              "m",  "n",  "p",  "r",  "s",  "t",  "v",  "w",
                                              "z",  "st", "tr", "pl", "br", "ch", "sh", "th"};
constexpr std::array<const char*, 8> kVowels{"a", "e", "i", "o", "u", "ai", "ea", "ou"};
constexpr std::array<const char*, 9> kCodas{"", "", "", "n", "r", "s", "l", "nd", "st"};
constexpr std::array<const char*, 8> kSuffixes{"", "s", "ed", "ing", "er", "ly", "ness", "able"};

template <std::size_t N>
const char* pick(const std::array<const char*, N>& xs, RngStream& rng) {
  return xs[static_cast<std::size_t>(rng.next_u64() % N)];
}

std::string syllable(RngStream& rng) {
  std::string s = pick(kOnsets, rng);
  s += pick(kVowels, rng);
  s += pick(kCodas, rng);
  return s;
}

}  // namespace

std::map<std::string, long> synthetic_counts(const SyntheticCorpusSpec& spec) {
  RngStream rng(spec.seed, "synthetic");
  // Stems of one or two syllables, each inflected with a few suffixes.
  std::vector<std::string> types;
  std::set<std::string> seen;
  std::size_t guard = 0;
  while (types.size() < spec.types && guard++ < 100000) {
    std::string stem = syllable(rng);
    if (rng.uniform() < 0.6) stem += syllable(rng);
    const int inflections = 1 + static_cast<int>(rng.next_u64() % 4);
    for (int k = 0; k < inflections && types.size() < spec.types; ++k) {
      std::string w = stem + (k == 0 ? "" : pick(kSuffixes, rng));
      if (w.size() < 2 || w.size() > 12 || seen.count(w)) continue;
      seen.insert(w);
      types.push_back(std::move(w));
    }
  }
  // Frequency rank is independent of generation order.
  for (std::size_t i = types.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(types[i - 1], types[j]);
  }
  std::map<std::string, long> counts;
  for (std::size_t r = 0; r < types.size(); ++r) {
    const double zipf = spec.head_count / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    counts[types[r]] = spec.floor_count + std::lround(zipf);
  }
  return counts;
}

std::string synthetic_text(const SyntheticCorpusSpec& spec) {
  const auto counts = synthetic_counts(spec);
  std::vector<const std::string*> tokens;
  for (const auto& [w, c] : counts)
    for (long i = 0; i < c; ++i) tokens.push_back(&w);
  RngStream rng(spec.seed, "synthetic/order");
  for (std::size_t i = tokens.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(tokens[i - 1], tokens[j]);
  }
  std::string text;
  std::size_t col = 0;
  for (const auto* t : tokens) {
    text += *t;
    col += t->size() + 1;
    if (col > 72) {
      text += '\n';
      col = 0;
    } else {
      text += ' ';
    }
  }
  if (!text.empty()) text.back() = '\n';
  return text;
}

}  // namespace dssm
