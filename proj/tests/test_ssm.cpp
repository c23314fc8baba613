#include "dssm/ssm.hpp"

#include <doctest.h>

#include <cmath>

using namespace dssm;

namespace {

ModelConfig small_config(Index d = 4, Index symbols = 5, const char* fg = "tril",
                         const char* fq = "tril") {
  ModelConfig c;
  c.d = d;
  c.d_emb = d;
  c.symbols = symbols;
  c.fg = FlowDef::parse(fg, d);
  c.fq = FlowDef::parse(fq, d);
  c.t_max = 6;
  return c;
}

void jitter(Model& m, std::uint64_t seed, double scale = 0.1) {
  RngStream rng(seed, "jitter");
  for (auto& v : m.params().values()) v += scale * rng.normal(v.rows(), v.cols());
}

double elbo_value(const Model& m, const SymbolSeq& w, RngStream rng) {
  Tape t(&m.params(), false);
  return elbo_sequence(t, m, w, rng).elbo.scalar();
}

// Zero proposal network: q is N(b_mu, exp(b_logvar)) regardless of context.
void constant_proposal(Model& m, double mu, double logvar) {
  const ProposalParams& p = m.proposal();
  for (std::size_t l = 0; l < p.net.layers(); ++l) {
    m.params().value(p.net.weight(l)).setZero();
    m.params().value(p.net.bias(l)).setZero();
  }
  Mat& b = m.params().value(p.net.bias(p.net.layers() - 1));
  b.topRows(m.config().d).setConstant(mu);
  b.bottomRows(m.config().d).setConstant(logvar);
}

void uniform_observation(Model& m) {
  m.params().value(m.observation().projection).setZero();
  m.params().value(m.observation().bias).setZero();
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.K = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.fq = FlowDef::parse("tril", 3);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.peek = true;
  c.conditioning = ProposalConditioning::BackwardPlusPrevState;
  CHECK(c.proposal_input_dim() == 3 * c.d);
  c.rnn = RnnMode::Bidirectional;
  CHECK(c.proposal_input_dim() == 4 * c.d);
}

TEST_CASE("identity flows with a standard normal proposal: bound is log P exactly") {
  ModelConfig c = small_config(1, 2, "id", "id");
  Model m(c, 1);
  constant_proposal(m, 0.0, 0.0);
  uniform_observation(m);
  RngStream rng(1, "analytic");
  for (int i = 0; i < 20; ++i) {
    Tape t(&m.params(), false);
    const SequenceResult r = elbo_sequence(t, m, SymbolSeq{0}, rng);
    CHECK(std::abs(r.elbo.scalar() + std::log(2.0)) < 1e-14);
  }
}

TEST_CASE("shifted proposal: per-draw bound and its expectation") {
  // q = N(1, 1), identity flows, one step: L = -ln 2 + log N(xi) - log N(xi - 1)
  // = -ln 2 - 1/2 - eps, so E[L] = -1/2 - ln 2.
  ModelConfig c = small_config(1, 2, "id", "id");
  Model m(c, 1);
  constant_proposal(m, 1.0, 0.0);
  uniform_observation(m);
  RngStream rng(2, "analytic");
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    Tape t(&m.params(), false);
    const SequenceResult r = elbo_sequence(t, m, SymbolSeq{1}, rng);
    const double eps = r.trajectory[0].xi(0) - 1.0;
    REQUIRE(std::abs(r.elbo.scalar() - (-std::log(2.0) - 0.5 - eps)) < 1e-12);
    sum += r.elbo.scalar();
  }
  CHECK(std::abs(sum / n - (-0.5 - std::log(2.0))) < 4.0 / std::sqrt(n));
}

TEST_CASE("per-step bound decomposes into its terms") {
  Model m(small_config(), 3);
  jitter(m, 3);
  RngStream rng(3, "terms");
  Tape t(&m.params(), false);
  const SequenceResult r = elbo_sequence(t, m, SymbolSeq{0, 2, 1, 4}, rng);
  double total = 0.0;
  for (const auto& row : r.trajectory) {
    CHECK(row.contribution == doctest::Approx(row.log_obs + row.log_r - row.log_q +
                                              row.logdet_q - row.logdet_g)
                                  .epsilon(1e-12));
    total += row.contribution;
  }
  CHECK(r.elbo.scalar() == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("shared flow cancels the log-determinants") {
  ModelConfig c = small_config();
  c.shared_flow = true;
  Model m(c, 4);
  jitter(m, 4);
  CHECK_FALSE(m.params().contains("fq.g.l0.W"));
  RngStream rng(4, "shared");
  Tape t(&m.params(), false);
  const SequenceResult r = elbo_sequence(t, m, SymbolSeq{1, 2, 4}, rng);
  for (const auto& row : r.trajectory) {
    CHECK(std::abs(row.logdet_q - row.logdet_g) < 1e-9);
    CHECK(row.contribution == doctest::Approx(row.log_obs + row.log_r - row.log_q).epsilon(1e-9));
    // zeta equals xi, so log r is the standard normal density at xi.
    const double lr = -0.5 * row.xi.squaredNorm() - 0.5 * 4 * std::log(2 * M_PI);
    CHECK(row.log_r == doctest::Approx(lr).epsilon(1e-9));
  }
}

TEST_CASE("importance-weighted bound with K = 1 equals the single-sample bound") {
  for (bool peek : {false, true}) {
    ModelConfig c = small_config();
    c.peek = peek;
    Model m(c, 5);
    jitter(m, 5);
    const SymbolSeq w{3, 0, 0, 4};
    RngStream a(5, "k1"), b(5, "k1");
    Tape ta(&m.params()), tb(&m.params());
    const SequenceResult e = elbo_sequence(ta, m, w, a);
    const SequenceResult i = iwae_sequence(tb, m, w, b, 1);
    CHECK(std::abs(e.elbo.scalar() - i.elbo.scalar()) < 1e-12);
    CHECK(a == b);
    for (double v : i.weight_variance) CHECK(v == 0.0);
    const GradList ga = ta.backward(e.elbo).params();
    const GradList gb = tb.backward(i.elbo).params();
    for (std::size_t k = 0; k < ga.size(); ++k)
      CHECK((ga[k] - gb[k]).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("importance-weight bookkeeping") {
  ModelConfig c = small_config();
  c.K = 4;
  c.peek = true;
  Model m(c, 6);
  jitter(m, 6);
  RngStream rng(6, "iw");
  Tape t(&m.params(), false);
  const auto ctx = backward_context(t, m, SymbolSeq{2, 4});
  const IwaeStepResult s = iwae_step(t, m, t.param(m.h0()), ctx[0], 2, rng, 4);
  CHECK(s.info.candidates.size() == 4);
  CHECK(s.info.normalized.sum() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.contribution.scalar() ==
        doctest::Approx(log_sum_exp(s.info.log_weights) - std::log(4.0)).epsilon(1e-14));
  CHECK(s.info.selected < 4);
  CHECK((s.h.value().col(0) - s.info.candidates[s.info.selected]).norm() == 0.0);
}

TEST_CASE("importance weighting tightens the bound on average") {
  ModelConfig c = small_config();
  Model m(c, 7);
  jitter(m, 7, 0.3);
  RngStream rng(7, "tight");
  const int n = 4000;
  double e = 0, k10 = 0;
  for (int i = 0; i < n; ++i) {
    Tape t(&m.params(), false);
    e += elbo_sequence(t, m, SymbolSeq{1, 4}, rng).elbo.scalar();
    k10 += iwae_sequence(t, m, SymbolSeq{1, 4}, rng, 10).elbo.scalar();
  }
  CHECK(k10 / n > e / n);
}

TEST_CASE("backward context") {
  Model m(small_config(), 8);
  jitter(m, 8);

  SUBCASE("single step is one GRU update from the initial state") {
    Tape t(&m.params(), false);
    const auto ctx = backward_context(t, m, SymbolSeq{3});
    REQUIRE(ctx.size() == 1);
    const Var ref = gru_step(t, m.backward_rnn(), embed(t, m.observation(), 3),
                             t.param(m.backward_init()));
    CHECK((ctx[0].value() - ref.value()).norm() == 0.0);
  }
  SUBCASE("hand unroll") {
    Tape t(&m.params(), false);
    const SymbolSeq w{0, 1, 2, 4};
    const auto ctx = backward_context(t, m, w);
    Var a = t.param(m.backward_init());
    for (int i = 3; i >= 0; --i) {
      a = gru_step(t, m.backward_rnn(), embed(t, m.observation(), w[i]), a);
      CHECK((ctx[i].value() - a.value()).norm() == 0.0);
    }
  }
  SUBCASE("a_t sees only the suffix w_t..w_T") {
    Tape t(&m.params(), false);
    const auto a = backward_context(t, m, SymbolSeq{0, 1, 2, 4});
    const auto b = backward_context(t, m, SymbolSeq{3, 1, 2, 4});
    CHECK((a[0].value() - b[0].value()).norm() > 0.0);
    for (int i = 1; i < 4; ++i) CHECK((a[i].value() - b[i].value()).norm() == 0.0);
    const auto c = backward_context(t, m, SymbolSeq{0, 1, 3, 4});
    for (int i = 0; i < 3; ++i) CHECK((a[i].value() - c[i].value()).norm() > 0.0);
    CHECK((a[3].value() - c[3].value()).norm() == 0.0);
  }
  SUBCASE("empty word") {
    Tape t(&m.params(), false);
    CHECK_THROWS_AS(backward_context(t, m, SymbolSeq{}), ShapeError);
  }
}

TEST_CASE("sequence input validation") {
  Model m(small_config(), 9);
  RngStream rng(9, "bad");
  Tape t(&m.params(), false);
  CHECK_THROWS_AS(elbo_sequence(t, m, SymbolSeq{0, 5}, rng), ShapeError);
  CHECK_THROWS_AS(elbo_sequence(t, m, SymbolSeq(7, 0), rng), ShapeError);
}

TEST_CASE("gradients match finite differences") {
  for (int K : {1, 3}) {
    ModelConfig c = small_config(4, 5);
    c.K = K;
    c.peek = K > 1;
    Model m(c, 10);
    jitter(m, 10);
    const SymbolSeq w{1, 3, 4};
    const RngStream seed_rng(10, "fd");
    auto objective = [&](const Model& mm) {
      RngStream r = seed_rng;
      Tape t(&mm.params(), false);
      return objective_sequence(t, mm, w, r).elbo.scalar();
    };
    RngStream r = seed_rng;
    Tape t(&m.params());
    const GradList g = t.backward(objective_sequence(t, m, w, r).elbo).params();
    RngStream pick(10, "fd/pick");
    int checked = 0;
    for (std::size_t p = 0; p < m.params().size(); ++p) {
      Mat& v = m.params().values()[p];
      const Index i = static_cast<Index>(pick.next_u64() % static_cast<std::uint64_t>(v.size()));
      const double orig = v(i);
      const double h = 1e-6;
      v(i) = orig + h;
      const double up = objective(m);
      v(i) = orig - h;
      const double down = objective(m);
      v(i) = orig;
      const double fd = (up - down) / (2 * h);
      INFO("K=" << K << " " << m.params().name(ParamId{static_cast<int>(p)}));
      CHECK(std::abs(fd - g[p](i)) < 1e-5 * (1.0 + std::abs(fd)));
      ++checked;
    }
    CHECK(checked == static_cast<int>(m.params().size()));
  }
}

TEST_CASE("generation") {
  ModelConfig c = small_config();
  Model m(c, 11);
  jitter(m, 11);

  SUBCASE("states follow the generative Markov chain") {
    RngStream rng(11, "markov");
    RngStream replay = rng;
    const auto states = sample_states(m, rng);
    REQUIRE(states.size() == 6);
    Vec h = m.params().value(m.h0());
    for (const Vec& s : states) {
      const Vec xi = replay.normal(c.d);
      h = m.fg().forward(m.params(), h, xi).out;
      CHECK((h - s).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(rng == replay);
  }
  SUBCASE("states never depend on emitted symbols") {
    // Two samplers that disagree on every symbol still leave the state noise
    // stream in the same position and see the same states.
    RngStream n1(12, "na"), n2(12, "na");
    std::vector<Vec> seen1, seen2;
    SymbolSampler first = [&](const Vec& lp) {
      seen1.push_back(lp);
      return 0;
    };
    SymbolSampler second = [&](const Vec& lp) {
      seen2.push_back(lp);
      return 1;
    };
    for (int i = 0; i < 5; ++i) {
      emit_word(m, sample_states(m, n1), first);
      emit_word(m, sample_states(m, n2), second);
    }
    CHECK(n1 == n2);
    REQUIRE(seen1.size() == seen2.size());
    for (std::size_t i = 0; i < seen1.size(); ++i) CHECK((seen1[i] - seen2[i]).norm() == 0.0);
  }
  SUBCASE("end-of-word everywhere gives empty words") {
    m.params().value(m.observation().bias)(c.eow()) = 100.0;
    RngStream a(13, "n"), b(13, "s");
    for (const auto& g : generate(m, a, b, 20)) {
      CHECK(g.symbols.empty());
      CHECK_FALSE(g.truncated);
    }
  }
  SUBCASE("words that never end are truncated") {
    m.params().value(m.observation().bias)(2) = 100.0;
    RngStream a(14, "n"), b(14, "s");
    for (const auto& g : generate(m, a, b, 5, {.argmax = true})) {
      CHECK(g.truncated);
      CHECK(g.symbols == SymbolSeq(5, 2));
    }
  }
  SUBCASE("deterministic given seeds") {
    RngStream a1(15, "n"), b1(15, "s"), a2(15, "n"), b2(15, "s");
    const auto x = generate(m, a1, b1, 50);
    const auto y = generate(m, a2, b2, 50);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].symbols == y[i].symbols);
  }
}

TEST_CASE("training") {
  ModelConfig c = small_config();
  const std::vector<SymbolSeq> words{{0, 1, 4}, {2, 4}, {3, 3, 1, 4}};
  BatchSource batches = [&](RngStream& rng) {
    std::vector<SymbolSeq> b;
    for (int i = 0; i < 4; ++i) b.push_back(words[rng.next_u64() % words.size()]);
    return b;
  };

  SUBCASE("zero learning rate leaves parameters untouched") {
    Model m(c, 16);
    const auto before = m.params().values();
    TrainConfig tc;
    tc.adam.lr = 0.0;
    tc.steps_per_epoch = 3;
    AdamState adam(m.params(), tc.adam);
    RngStream rng(16, "train");
    train(m, tc, adam, batches, 2, rng);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK((before[i] - m.params().values()[i]).norm() == 0.0);
    CHECK(adam.step == 6);
  }
  SUBCASE("single-sample training reports zero weight variance and improves") {
    Model m(c, 17);
    TrainConfig tc;
    tc.adam.lr = 1e-2;
    tc.steps_per_epoch = 50;
    AdamState adam(m.params(), tc.adam);
    RngStream rng(17, "train");
    int calls = 0;
    const auto log = train(m, tc, adam, batches, 4, rng, 3, [&](const EpochRecord&) { ++calls; });
    CHECK(calls == 4);
    REQUIRE(log.size() == 4);
    CHECK(log.front().epoch == 3);
    CHECK(log.back().step == 200);
    for (const auto& r : log) CHECK(r.weight_variance == 0.0);
    CHECK(log.back().mean_elbo_nats > log.front().mean_elbo_nats);
    CHECK(log.back().mean_elbo_bits == doctest::Approx(log.back().mean_elbo_nats / std::log(2.0)));
  }
  SUBCASE("non-finite parameters abort with the step index") {
    Model m(c, 18);
    TrainConfig tc;
    AdamState adam(m.params(), tc.adam);
    adam.step = 41;
    m.params().value(m.h0())(0) = std::nan("");
    RngStream rng(18, "train");
    try {
      train_step(m, tc, adam, batches(rng), rng);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.step() == 42);
      CHECK(std::string(e.what()).find("tril") != std::string::npos);
    }
  }
}

TEST_CASE("models rebind to stored parameters") {
  ModelConfig c = small_config();
  c.rnn = RnnMode::Bidirectional;
  Model a(c, 19);
  jitter(a, 19);
  Model b(c, a.params());
  RngStream r(19, "rebind");
  CHECK(elbo_value(a, {1, 2, 4}, r) == elbo_value(b, {1, 2, 4}, r));
  ModelConfig wrong = c;
  wrong.symbols = 6;
  CHECK_THROWS_AS(Model(wrong, a.params()), ConfigError);
}
