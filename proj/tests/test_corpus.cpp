#include "dssm/corpus.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dssm;

namespace {

LexiconFilter filter(long min_count, int min_len = 2, int max_len = 12) {
  return {min_count, min_len, max_len};
}

}  // namespace

TEST_CASE("alphabet") {
  const Alphabet ab("abc");
  CHECK(ab.size() == 4);
  CHECK(ab.eow() == 3);
  CHECK(ab.id('b') == 1);
  CHECK(ab.id('z') == -1);
  CHECK(ab.encode("cab") == SymbolSeq{2, 0, 1, 3});
  CHECK(ab.encode("cab", false) == SymbolSeq{2, 0, 1});
  CHECK(ab.decode(SymbolSeq{2, 0, 1, 3}) == "cab");
  CHECK(ab.spells("abba"));
  CHECK_FALSE(ab.spells("abd"));
  CHECK_THROWS_AS(ab.encode("abd"), ConfigError);
}

TEST_CASE("tokenizer") {
  CHECK(tokenize("  The cat, \"sat\"\ton the-mat.\n") ==
        std::vector<std::string>{"the", "cat", "sat", "on", "the-mat"});
  CHECK(tokenize("x1y ...").size() == 1);
  CHECK(tokenize("").empty());
}

TEST_CASE("lexicon filtering") {
  const Lexicon lex = build_lexicon(std::string_view("ab ab ab cd"), filter(2));
  CHECK(lex.counts() == std::map<std::string, long>{{"ab", 3}});

  const Lexicon mixed =
      build_lexicon(std::string_view("x1y x1y a a ok ok the-end the-end abcdefghijklm abcdefghijklm"),
                    filter(2));
  CHECK(mixed.counts() == std::map<std::string, long>{{"ok", 2}});

  CHECK_THROWS_AS(build_lexicon(std::string_view("ab cd"), filter(2)), ConfigError);
  CHECK_THROWS_AS(build_lexicon(std::string_view("ab ab"), filter(0)), ConfigError);
}

TEST_CASE("filtering is idempotent") {
  const std::string text = synthetic_text({});
  const LexiconFilter f = filter(10);
  const Lexicon once = build_lexicon(std::string_view(text), f);
  const Lexicon twice = filter_counts(once.counts(), f);
  CHECK(once.counts() == twice.counts());
}

TEST_CASE("lexicon statistics") {
  Lexicon lex(Alphabet("ab"));
  lex.add("ab", 2);
  lex.add("ba", 1);
  lex.add("aa", 1);
  CHECK(lex.tokens() == 4);
  CHECK(lex.types() == 3);
  CHECK(lex.probability("ab") == 0.5);
  CHECK(lex.probability("bb") == 0.0);
  CHECK(lex.entropy_bits() == doctest::Approx(1.5));
  double mass = 0.0;
  for (const auto& [w, p] : lex.distribution()) mass += p;
  CHECK(mass == doctest::Approx(1.0));
  const auto s = lex.sorted();
  REQUIRE(s.size() == 3);
  CHECK(s[0].first == "ab");
  CHECK(s[1].first == "aa");
  CHECK(s[2].first == "ba");
}

TEST_CASE("lexicon text round trip") {
  Lexicon lex(Alphabet("abc"));
  lex.add("cab", 5);
  lex.add("ab", 7);
  lex.add("ba", 5);
  std::ostringstream os;
  write_lexicon(os, lex);
  CHECK(os.str() == "ab\t7\nba\t5\ncab\t5\n");
  std::istringstream is(os.str());
  const Lexicon back = read_lexicon(is, Alphabet("abc"));
  CHECK(back.counts() == lex.counts());
  std::istringstream bad("ab\tx\n");
  CHECK_THROWS_AS(read_lexicon(bad, Alphabet("abc")), ConfigError);
  std::istringstream foreign("abd\t3\n");
  CHECK_THROWS_AS(read_lexicon(foreign, Alphabet("abc")), ConfigError);
}

TEST_CASE("splits") {
  const Lexicon lex = filter_counts(synthetic_counts({}), filter(10));

  SUBCASE("token split preserves every occurrence") {
    const Split s = split(lex, {SplitMode::Token, 0.1, 3});
    for (const auto& [w, c] : lex.counts()) {
      const long tr = s.train.contains(w) ? s.train.counts().at(w) : 0;
      const long te = s.test.contains(w) ? s.test.counts().at(w) : 0;
      CHECK(tr + te == c);
    }
    const double frac = static_cast<double>(s.test.tokens()) / static_cast<double>(lex.tokens());
    const double se = std::sqrt(0.09 / static_cast<double>(lex.tokens()));
    CHECK(std::abs(frac - 0.1) < 4 * se);
  }
  SUBCASE("type split keeps train and test disjoint") {
    const Split s = split(lex, {SplitMode::Type, 0.1, 3});
    for (const auto& [w, c] : s.test.counts()) {
      CHECK_FALSE(s.train.contains(w));
      CHECK(c == lex.counts().at(w));
    }
    CHECK(s.test.types() == static_cast<std::size_t>(std::llround(0.1 * lex.types())));
    CHECK(s.train.types() + s.test.types() == lex.types());
  }
  SUBCASE("zero fraction leaves the test set empty") {
    for (SplitMode mode : {SplitMode::Token, SplitMode::Type}) {
      const Split s = split(lex, {mode, 0.0, 3});
      CHECK(s.test.empty());
      CHECK(s.train.counts() == lex.counts());
    }
  }
  SUBCASE("deterministic per seed") {
    for (SplitMode mode : {SplitMode::Token, SplitMode::Type}) {
      CHECK(split(lex, {mode, 0.2, 5}).test.counts() == split(lex, {mode, 0.2, 5}).test.counts());
      CHECK(split(lex, {mode, 0.2, 5}).test.counts() != split(lex, {mode, 0.2, 6}).test.counts());
    }
  }
  SUBCASE("bad fraction") { CHECK_THROWS_AS(split(lex, {SplitMode::Token, 1.5, 1}), ConfigError); }
}

TEST_CASE("batch sampler follows word frequencies") {
  Lexicon lex(Alphabet("abc"));
  lex.add("ab", 60);
  lex.add("ca", 30);
  lex.add("bbc", 10);
  const BatchSampler sampler(lex);
  RngStream rng(1, "sampler");
  const int n = 100000;
  std::map<std::string, int> hits;
  for (const auto& w : sampler.next(n, rng)) {
    CHECK(w.back() == lex.alphabet().eow());
    ++hits[lex.alphabet().decode(w)];
  }
  for (const auto& [w, c] : lex.counts()) {
    const double p = lex.probability(w);
    const double se = std::sqrt(p * (1 - p) / n);
    CHECK(std::abs(static_cast<double>(hits[w]) / n - p) < 3 * se);
  }
}

TEST_CASE("synthetic corpus") {
  const SyntheticCorpusSpec spec;
  const auto counts = synthetic_counts(spec);
  CHECK(counts.size() == spec.types);
  const Alphabet ab;
  for (const auto& [w, c] : counts) {
    CHECK(ab.spells(w));
    CHECK(w.size() >= 2);
    CHECK(w.size() <= 12);
    CHECK(c >= spec.floor_count);
  }
  CHECK(synthetic_counts(spec) == counts);
  SyntheticCorpusSpec other = spec;
  other.seed = 8;
  CHECK(synthetic_counts(other) != counts);

  // The running text realizes exactly these counts.
  const Lexicon lex = build_lexicon(std::string_view(synthetic_text(spec)), filter(1));
  CHECK(lex.counts() == counts);
}
