// SPDX-License-Identifier: Apache-2.0
#include "dssm/eval.hpp"

#include <cmath>

namespace dssm {

WittenBell::WittenBell(int order, int vocab) : order_(order), vocab_(vocab) {
  if (order < 1) throw ConfigError("n-gram order must be >= 1");
  if (vocab < 1) throw ConfigError("n-gram vocabulary must be non-empty");
}

namespace {

// Last n-1 symbols of `context`, left-padded with the boundary id.
std::vector<int> padded(std::span<const int> context, int n, int boundary) {
  const auto width = static_cast<std::size_t>(n - 1);
  std::vector<int> out(width, boundary);
  const std::size_t take = std::min(width, context.size());
  std::copy(context.end() - static_cast<long>(take), context.end(),
            out.end() - static_cast<long>(take));
  return out;
}

}  // namespace

void WittenBell::add(std::span<const int> word, long count) {
  if (count < 0) throw ConfigError("n-gram: negative count");
  if (count == 0) return;
  std::vector<int> seq(static_cast<std::size_t>(order_ - 1), boundary());
  for (int s : word) {
    if (s < 0 || s >= vocab_) throw ShapeError("n-gram: symbol id out of range");
    seq.push_back(s);
  }
  const std::size_t pad = static_cast<std::size_t>(order_ - 1);
  for (std::size_t i = pad; i < seq.size(); ++i) {
    for (std::size_t k = 0; k <= pad; ++k) {
      std::vector<int> ctx(seq.begin() + static_cast<long>(i - k), seq.begin() + static_cast<long>(i));
      auto& c = table_[ctx];
      c.total += count;
      c.next[seq[i]] += count;
    }
  }
}

double WittenBell::prob(std::span<const int> context, int w) const {
  if (w < 0 || w >= vocab_) throw ShapeError("n-gram: symbol id out of range");
  const auto full = padded(context, order_, boundary());
  double p = 1.0 / vocab_;
  for (std::size_t k = 0; k <= full.size(); ++k) {
    std::vector<int> ctx(full.end() - static_cast<long>(k), full.end());
    auto it = table_.find(ctx);
    // An unseen context keeps all of its mass on the shorter context.
    if (it == table_.end() || it->second.total == 0) continue;
    const auto& c = it->second;
    const auto n1 = static_cast<double>(c.next.size());
    auto hit = c.next.find(w);
    const double cw = hit == c.next.end() ? 0.0 : static_cast<double>(hit->second);
    p = (cw + n1 * p) / (static_cast<double>(c.total) + n1);
  }
  return p;
}

long WittenBell::count(std::span<const int> context) const {
  auto it = table_.find(std::vector<int>(context.begin(), context.end()));
  return it == table_.end() ? 0 : it->second.total;
}

long WittenBell::count(std::span<const int> context, int w) const {
  auto it = table_.find(std::vector<int>(context.begin(), context.end()));
  if (it == table_.end()) return 0;
  auto hit = it->second.next.find(w);
  return hit == it->second.next.end() ? 0 : hit->second;
}

long WittenBell::distinct(std::span<const int> context) const {
  auto it = table_.find(std::vector<int>(context.begin(), context.end()));
  return it == table_.end() ? 0 : static_cast<long>(it->second.next.size());
}

std::vector<std::vector<int>> WittenBell::contexts() const {
  std::vector<std::vector<int>> out;
  for (const auto& [ctx, c] : table_)
    if (ctx.size() == static_cast<std::size_t>(order_ - 1)) out.push_back(ctx);
  return out;
}

WittenBell wb_train(std::span<const SymbolSeq> words, int n, int vocab) {
  WittenBell m(n, vocab);
  for (const auto& w : words) m.add(w);
  return m;
}

WittenBell wb_train(const Lexicon& corpus, int n) {
  WittenBell m(n, corpus.alphabet().size());
  for (const auto& [w, c] : corpus.counts()) m.add(corpus.alphabet().encode(w), c);
  return m;
}

double ngram_perplexity(const WittenBell& model, std::span<const SymbolSeq> words) {
  double log2_sum = 0.0;
  long n = 0;
  for (const auto& w : words) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      log2_sum += std::log2(model.prob(std::span<const int>(w.data(), i), w[i]));
      ++n;
    }
  }
  if (n == 0) throw ConfigError("n-gram perplexity: empty sample");
  return std::exp2(-log2_sum / static_cast<double>(n));
}

}  // namespace dssm
