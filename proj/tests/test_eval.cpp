#include "dssm/eval.hpp"

#include <doctest.h>

#include <cmath>

using namespace dssm;

namespace {

ModelConfig tiny(Index d, Index symbols, int t_max, const char* fg = "tril") {
  ModelConfig c;
  c.d = d;
  c.d_emb = d;
  c.symbols = symbols;
  c.fg = FlowDef::parse(fg, d);
  c.fq = FlowDef::parse("tril", d);
  c.t_max = t_max;
  return c;
}

void jitter(Model& m, std::uint64_t seed, double scale) {
  RngStream rng(seed, "jitter");
  for (auto& v : m.params().values()) v += scale * rng.normal(v.rows(), v.cols());
}

MarginalEstimate est(double log2p) { return floored_estimate({0}, log2p, 1); }

}  // namespace

TEST_CASE("state-independent observations give exact marginals") {
  Model m(tiny(4, 10, 5), 1);
  m.params().value(m.observation().projection).setZero();
  RngStream rng(1, "marg");
  const std::vector<SymbolSeq> words{{9}, {0, 9}, {3, 3, 3, 9}};
  const auto e = estimate_marginals(m, words, 7, rng);
  CHECK(e[0].log2_prob == doctest::Approx(std::log2(0.1)).epsilon(1e-14));
  CHECK(e[0].prob == doctest::Approx(0.1).epsilon(1e-13));
  CHECK(e[1].prob == doctest::Approx(0.01).epsilon(1e-13));
  CHECK(e[2].prob == doctest::Approx(1e-4).epsilon(1e-12));
  for (const auto& x : e) {
    CHECK(x.K == 7);
    CHECK_FALSE(x.floored);
  }
}

TEST_CASE("K = 1 marginal is the product along one prior trajectory") {
  Model m(tiny(4, 5, 6), 2);
  jitter(m, 2, 0.5);
  RngStream rng(2, "marg"), replay(2, "marg");
  const SymbolSeq w{1, 0, 2, 4};
  const auto e = estimate_marginals(m, std::vector<SymbolSeq>{w}, 1, rng);
  const auto states = sample_states(m, replay);
  double lp = 0.0;
  for (std::size_t t = 0; t < w.size(); ++t)
    lp += observation_log_probs(m.params(), m.observation(), states[t])(w[t]);
  CHECK(e[0].log2_prob == doctest::Approx(lp / std::log(2.0)).epsilon(1e-12));
  CHECK(rng == replay);
}

TEST_CASE("marginal estimates over every short word carry at most unit mass") {
  // Two letters plus end-of-word, t_max 4: enumerate all 1 + 2 + 4 + 8 words.
  Model m(tiny(3, 3, 4), 3);
  jitter(m, 3, 0.5);
  std::vector<SymbolSeq> all;
  std::vector<SymbolSeq> prefixes{{}};
  for (int len = 0; len < 4; ++len) {
    std::vector<SymbolSeq> next;
    for (const auto& p : prefixes) {
      SymbolSeq w = p;
      w.push_back(2);
      all.push_back(w);
      for (int s : {0, 1}) {
        SymbolSeq q = p;
        q.push_back(s);
        next.push_back(q);
      }
    }
    prefixes = next;
  }
  REQUIRE(all.size() == 15);
  RngStream rng(3, "enum");
  double mass = 0.0;
  for (const auto& e : estimate_marginals(m, all, 200, rng)) mass += e.prob;
  CHECK(mass <= 1.0 + 1e-12);
  CHECK(mass > 0.0);
}

TEST_CASE("marginal input validation and flooring") {
  Model m(tiny(2, 3, 3), 4);
  m.params().value(m.observation().projection).setZero();
  RngStream rng(4, "val");
  CHECK_THROWS_AS(estimate_marginals(m, std::vector<SymbolSeq>{{0, 1}}, 5, rng), ShapeError);
  CHECK_THROWS_AS(estimate_marginals(m, std::vector<SymbolSeq>{{0, 2}}, 0, rng), ConfigError);
  const auto e = estimate_marginals(m, std::vector<SymbolSeq>{{0, 0, 0, 2}}, 5, rng);
  CHECK(e[0].floored);
  CHECK(e[0].log2_prob == kLog2ProbFloor);
  const MarginalEstimate f = floored_estimate({2}, -55.0, 3);
  CHECK(f.floored);
  CHECK(f.prob == std::exp2(-40.0));
  CHECK_FALSE(floored_estimate({2}, -39.0, 3).floored);
}

TEST_CASE("cross-entropy") {
  const std::map<std::string, double> data{{"a", 0.25}, {"b", 0.25}, {"c", 0.25}, {"d", 0.25}};
  std::map<std::string, MarginalEstimate> uniform;
  for (const auto& [w, p] : data) uniform[w] = est(-2.0);
  CHECK(cross_entropy(data, uniform).value == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cross_entropy(data, uniform, EntropyUnit::Nats).value ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));

  SUBCASE("never below the data entropy for a normalized model") {
    RngStream rng(5, "gibbs");
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> q(4);
      double s = 0;
      for (auto& x : q) s += (x = rng.uniform() + 1e-3);
      std::map<std::string, MarginalEstimate> model;
      int i = 0;
      for (const auto& [w, p] : data) model[w] = est(std::log2(q[static_cast<std::size_t>(i++)] / s));
      CHECK(cross_entropy(data, model).value >= 2.0 - 1e-12);
    }
  }
  SUBCASE("floored words are counted") {
    auto m = uniform;
    m["c"] = est(-100.0);
    const CrossEntropy h = cross_entropy(data, m);
    CHECK(h.floored == 1);
    CHECK(h.value == doctest::Approx(0.75 * 2.0 + 0.25 * 40.0));
  }
  SUBCASE("malformed input") {
    auto m = uniform;
    m.erase("d");
    CHECK_THROWS_AS(cross_entropy(data, m), ConfigError);
    auto d2 = data;
    d2["a"] = 0.5;
    CHECK_THROWS_AS(cross_entropy(d2, uniform), ConfigError);
  }
}

TEST_CASE("coverage") {
  const std::vector<std::string> gen{"ab", "ab", "cd"};
  const Coverage c = coverage_metrics(gen, {"ab", "ef"});
  CHECK(c.in_vocab == doctest::Approx(2.0 / 3.0));
  CHECK(c.unique_in_vocab == doctest::Approx(0.5));
  CHECK_THROWS_AS(coverage_metrics(std::vector<std::string>{}, {"ab"}), ConfigError);
}

TEST_CASE("entropy") {
  CHECK(entropy_bits(Vec::Constant(8, 0.125)) == doctest::Approx(3.0).epsilon(1e-15));
  Vec p(3);
  p << 1.0, 0.0, 0.0;
  CHECK(entropy_bits(p) == 0.0);
}

TEST_CASE("mutual information") {
  SUBCASE("exactly zero when observations ignore the state") {
    Model m(tiny(4, 6, 5), 6);
    jitter(m, 6, 0.3);
    m.params().value(m.observation().projection).setZero();
    RngStream rng(6, "mi");
    const MiReport r = mutual_information_profile(m, 10, 6, rng);
    REQUIRE(r.per_position.size() == 5);
    for (double v : r.per_position) CHECK(v == 0.0);
    CHECK(r.mean == 0.0);
    CHECK(r.mean_realized == 0.0);
    CHECK(mutual_information(m, 3, 5, 4, rng) == 0.0);
  }
  SUBCASE("first position matches quadrature") {
    // d = 1, identity transition from h0 = 0: h_1 = xi. Two symbols with
    // logits (3h, 0): I = H[E p(h)] - E H[p(h)] under h ~ N(0, 1).
    Model m(tiny(1, 2, 3, "id"), 7);
    m.params().value(m.observation().projection) << 3.0, 0.0;
    m.params().value(m.observation().bias).setZero();
    double mean_p = 0.0, mean_h = 0.0;
    const int n = 200000;
    const double lo = -10.0, dx = 20.0 / n;
    for (int i = 0; i <= n; ++i) {
      const double x = lo + i * dx;
      const double w = std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI) * dx * ((i == 0 || i == n) ? 0.5 : 1.0);
      const double p = 1.0 / (1.0 + std::exp(-3.0 * x));
      mean_p += w * p;
      Vec pv(2);
      pv << p, 1.0 - p;
      mean_h += w * entropy_bits(pv);
    }
    Vec mix(2);
    mix << mean_p, 1.0 - mean_p;
    const double exact = entropy_bits(mix) - mean_h;
    RngStream rng(7, "mi");
    const double mc = mutual_information(m, 1, 1, 200000, rng);
    CHECK(std::abs(mc - exact) < 5e-3);
    const MiReport r = mutual_information_profile(m, 1, 200000, rng, 1);
    CHECK(std::abs(r.per_position[0] - exact) < 5e-3);
  }
  SUBCASE("bounded by the symbol entropy") {
    Model m(tiny(4, 5, 4), 8);
    jitter(m, 8, 1.0);
    RngStream rng(8, "mi");
    const MiReport r = mutual_information_profile(m, 20, 20, rng);
    for (double v : r.per_position) {
      CHECK(v >= -1e-12);
      CHECK(v <= std::log2(5.0) + 1e-12);
    }
  }
  SUBCASE("argument checks") {
    Model m(tiny(2, 3, 3), 9);
    RngStream rng(9, "mi");
    CHECK_THROWS_AS(mutual_information_profile(m, 0, 4, rng), ConfigError);
    CHECK_THROWS_AS(mutual_information_profile(m, 4, 1, rng), ConfigError);
    CHECK_THROWS_AS(mutual_information(m, 4, 4, 4, rng), ConfigError);
  }
}

TEST_CASE("Witten-Bell bigram by hand") {
  // Letters a=0, b=1, end-of-word 2; "ab" seen twice.
  WittenBell wb(2, 3);
  wb.add(SymbolSeq{0, 1, 2}, 2);
  const int B = wb.boundary();
  CHECK(wb.count(std::vector<int>{}) == 6);
  CHECK(wb.count(std::vector<int>{B}, 0) == 2);
  CHECK(wb.distinct(std::vector<int>{0}) == 1);
  const std::vector<int> empty;
  CHECK(wb.prob(empty, 0) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
  CHECK(wb.prob(empty, 1) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(wb.prob(std::vector<int>{0}, 1) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
  CHECK(wb.prob(std::vector<int>{0}, 2) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  // Context "eow" never occurs: falls back to the unigram (2 + 1) / (6 + 3).
  CHECK(wb.prob(std::vector<int>{2}, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const std::vector<SymbolSeq> test{{0, 1, 2}};
  CHECK(ngram_perplexity(wb, test) == doctest::Approx(9.0 / 7.0).epsilon(1e-14));
}

TEST_CASE("Witten-Bell distributions normalize") {
  RngStream rng(10, "wb");
  std::vector<SymbolSeq> words;
  for (int i = 0; i < 200; ++i) {
    SymbolSeq w;
    const auto len = 1 + rng.next_u64() % 6;
    for (std::size_t k = 0; k < len; ++k) w.push_back(static_cast<int>(rng.next_u64() % 4));
    w.push_back(4);
    words.push_back(w);
  }
  for (int n : {1, 2, 3, 5}) {
    const WittenBell wb = wb_train(words, n, 5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> ctx;
      const auto len = rng.next_u64() % 6;
      for (std::size_t k = 0; k < len; ++k) ctx.push_back(static_cast<int>(rng.next_u64() % 5));
      double s = 0.0;
      for (int w = 0; w < 5; ++w) {
        const double p = wb.prob(ctx, w);
        CHECK(p > 0.0);
        s += p;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(ngram_perplexity(wb, words) <= 5.0);
  }
}

TEST_CASE("Witten-Bell edge cases") {
  CHECK_THROWS_AS(WittenBell(0, 3), ConfigError);
  CHECK_THROWS_AS(wb_train(std::vector<SymbolSeq>{}, 0, 3), ConfigError);
  WittenBell single(3, 1);
  single.add(SymbolSeq{0}, 5);
  CHECK(ngram_perplexity(single, std::vector<SymbolSeq>{{0}, {0}}) == 1.0);
  WittenBell empty(2, 4);
  CHECK(empty.prob(std::vector<int>{1}, 3) == 0.25);
  CHECK_THROWS_AS(empty.add(SymbolSeq{4}), ShapeError);
}

TEST_CASE("Witten-Bell from a lexicon") {
  Alphabet ab("ab");
  Lexicon lex(ab);
  lex.add("ab", 2);
  const WittenBell wb = wb_train(lex, 2);
  CHECK(wb.vocab() == 3);
  CHECK(wb.prob(std::vector<int>{0}, 1) == doctest::Approx(7.0 / 9.0));
  CHECK(wb.contexts().size() == 3);
}
