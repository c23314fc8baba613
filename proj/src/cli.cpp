// SPDX-License-Identifier: Apache-2.0
#include "dssm/cli.hpp"

#include "dssm/baseline.hpp"
#include "dssm/eval.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;

namespace dssm {

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// Either a state space model or the autoregressive baseline.
struct AnyModel {
  std::optional<Model> ssm;
  std::optional<BaselineModel> baseline;

  ParamStore& params() { return ssm ? ssm->params() : baseline->params(); }

  static AnyModel fresh(const RunConfig& cfg) {
    AnyModel m;
    if (cfg.kind == ModelKind::Ssm)
      m.ssm.emplace(cfg.model_config(), cfg.seed);
    else
      m.baseline.emplace(cfg.baseline_config(), cfg.seed);
    return m;
  }

  static AnyModel bind(const RunConfig& cfg, ParamStore params) {
    AnyModel m;
    if (cfg.kind == ModelKind::Ssm)
      m.ssm.emplace(cfg.model_config(), std::move(params));
    else
      m.baseline.emplace(cfg.baseline_config(), std::move(params));
    return m;
  }
};

std::vector<GeneratedWord> sample_words(const AnyModel& m, std::uint64_t seed, std::size_t n,
                                        bool argmax) {
  RngStream noise(seed, "sample/noise");
  RngStream symbols(seed, "sample/symbols");
  if (m.ssm) return generate(*m.ssm, noise, symbols, n, {argmax});
  return generate_baseline(*m.baseline, symbols, n, {argmax});
}

Lexicon load_split(const std::string& path, const Alphabet& alphabet, const char* what) {
  if (path.empty()) throw ConfigError(std::string("no ") + what + " data file configured");
  try {
    return load_lexicon(path, alphabet);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

const char* kLogHeader =
    "epoch\tstep\telbo_bits\tmi_mean_bits\tsymbol_entropy_bits\tweight_variance\tgrad_norm\n";

}  // namespace

// ---------------------------------------------------------------------------

void cmd_prepare(const PrepareOptions& opts, std::ostream& log) {
  if (opts.min_count < 1) throw ConfigError("prepare: --min-count must be >= 1");
  if (!(opts.test_fraction >= 0.0 && opts.test_fraction <= 1.0))
    throw ConfigError("prepare: --test-fraction must lie in [0, 1]");
  const Alphabet alphabet(opts.alphabet);
  const LexiconFilter filter{opts.min_count, opts.min_len, opts.max_len};
  fs::create_directories(opts.out);
  Lexicon lex;
  if (opts.input.empty()) {
    const std::string text = synthetic_text({});
    write_text(fs::path(opts.out) / "corpus.txt", text);
    lex = build_lexicon(std::string_view(text), filter, alphabet);
  } else {
    std::ifstream is(opts.input);
    if (!is) throw ConfigError("prepare: cannot read " + opts.input);
    lex = build_lexicon(is, filter, alphabet);
  }
  const Split parts = split(lex, {opts.split, opts.test_fraction, opts.seed});
  save_lexicon((fs::path(opts.out) / "lexicon.tsv").string(), lex);
  save_lexicon((fs::path(opts.out) / "train.tsv").string(), parts.train);
  save_lexicon((fs::path(opts.out) / "test.tsv").string(), parts.test);
  log << "lexicon: " << lex.types() << " types, " << lex.tokens() << " tokens\n"
      << "train: " << parts.train.types() << " types, " << parts.train.tokens() << " tokens\n"
      << "test: " << parts.test.types() << " types, " << parts.test.tokens() << " tokens\n";
}

// ---------------------------------------------------------------------------

void cmd_train(const TrainOptions& opts, std::ostream& log) {
  RunConfig cfg;
  std::optional<Checkpoint> resume;
  if (!opts.resume.empty()) {
    resume = load_checkpoint(opts.resume);
    cfg = resume->config;
    if (!opts.config.empty()) {
      // Only the epoch budget may change on resume.
      RunConfig given = load_config(opts.config);
      RunConfig a = given, b = cfg;
      a.epochs = b.epochs = 0;
      a.out_dir = b.out_dir = "";
      if (format_config(a) != format_config(b))
        throw ConfigError("train: --config differs from the checkpoint beyond train.epochs");
      cfg.epochs = given.epochs;
    }
  } else {
    if (opts.config.empty()) throw ConfigError("train: --config is required");
    cfg = load_config(opts.config);
  }
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  const Alphabet alphabet = cfg.make_alphabet();
  const Lexicon train_lex = load_split(cfg.train_path, alphabet, "training");
  const BatchSampler sampler(train_lex);
  const TrainConfig tcfg = cfg.train_config();

  AnyModel model = resume ? AnyModel::bind(cfg, resume->params) : AnyModel::fresh(cfg);
  AdamState adam = resume ? resume->adam : AdamState(model.params(), tcfg.adam);
  adam.config = tcfg.adam;
  RngStream rng(cfg.seed, "train");
  int first_epoch = 1;
  if (resume) {
    for (const auto& [label, state] : resume->rng)
      if (label == "train") rng.set_state(state);
    first_epoch = resume->epoch + 1;
  }

  // Keep log rows up to the resumed epoch so that the file matches an
  // uninterrupted run.
  const fs::path log_path = out / "train_log.tsv";
  std::string log_text = kLogHeader;
  if (resume) {
    std::ifstream is(log_path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (std::stoi(line.substr(0, line.find('\t'))) < first_epoch) log_text += line + "\n";
    }
  }
  write_text(log_path, log_text);
  write_text(out / "config.txt", format_config(cfg));

  auto on_epoch = [&](const EpochRecord& rec) {
    std::string mi = "na", hsym = "na";
    if (model.ssm && cfg.log_mi_M > 0) {
      RngStream mi_rng(cfg.seed, "train/mi/" + std::to_string(rec.epoch));
      const MiReport r = mutual_information_profile(*model.ssm, cfg.log_mi_M, cfg.mi_K, mi_rng);
      double h = 0.0;
      for (double x : r.symbol_entropy) h += x;
      mi = num(r.mean);
      hsym = num(h / static_cast<double>(r.symbol_entropy.size()));
    }
    const std::string row = std::to_string(rec.epoch) + "\t" + std::to_string(rec.step) + "\t" +
                            num(rec.mean_elbo_bits) + "\t" + mi + "\t" + hsym + "\t" +
                            num(rec.weight_variance) + "\t" + num(rec.grad_norm) + "\n";
    log_text += row;
    write_text(log_path, log_text);
    Checkpoint ck{cfg, model.params(), adam, rec.epoch, {{"train", rng.state()}}};
    save_checkpoint((out / "checkpoint.txt").string(), ck);
    log << "epoch " << rec.epoch << " step " << rec.step << " elbo " << num(rec.mean_elbo_bits)
        << " bits  I " << mi << '\n';
  };

  const BatchSource batches = [&](RngStream& r) {
    return sampler.next(static_cast<std::size_t>(tcfg.batch), r);
  };
  const int epochs = cfg.epochs - first_epoch + 1;
  if (epochs <= 0) {
    log << "nothing to do: checkpoint already at epoch " << first_epoch - 1 << '\n';
    return;
  }
  if (model.ssm)
    train(*model.ssm, tcfg, adam, batches, epochs, rng, first_epoch, on_epoch);
  else
    train_baseline(*model.baseline, tcfg, adam, batches, epochs, rng, first_epoch, on_epoch);
}

// ---------------------------------------------------------------------------

std::string cmd_eval(const EvalOptions& opts, std::ostream& log) {
  const bool oracle = opts.oracle == "train";
  if (!opts.oracle.empty() && !oracle) throw ConfigError("eval: --oracle accepts only 'train'");
  if (opts.ckpt.empty() && !oracle) throw ConfigError("eval: --ckpt is required");

  RunConfig cfg;
  std::optional<AnyModel> model;
  if (!opts.ckpt.empty()) {
    Checkpoint ck = load_checkpoint(opts.ckpt);
    cfg = ck.config;
    model = AnyModel::bind(cfg, std::move(ck.params));
  }
  if (!opts.train.empty()) cfg.train_path = opts.train;
  if (!opts.test.empty()) cfg.test_path = opts.test;
  if (opts.K > 0) cfg.eval_K = opts.K;
  if (opts.mi_K > 0) cfg.mi_K = opts.mi_K;
  if (opts.mi_M > 0) cfg.mi_M = opts.mi_M;
  if (!opts.ngrams.empty()) cfg.ngrams = opts.ngrams;
  if (opts.samples > 0) cfg.samples = opts.samples;
  if (opts.seed != 0) cfg.seed = opts.seed;
  cfg.validate();

  const Alphabet alphabet = cfg.make_alphabet();
  const Lexicon train_lex = load_split(cfg.train_path, alphabet, "training");
  const Lexicon test_lex = load_split(cfg.test_path, alphabet, "test");
  if (test_lex.empty()) throw ConfigError("eval: test split is empty");

  std::vector<SymbolSeq> words;
  std::set<std::string> vocab;
  {
    std::set<std::string> all;
    for (const auto& [w, c] : train_lex.counts()) {
      all.insert(w);
      vocab.insert(w);
    }
    for (const auto& [w, c] : test_lex.counts()) all.insert(w);
    for (const auto& w : all) words.push_back(alphabet.encode(w));
  }

  // Word probabilities under the model.
  std::vector<MarginalEstimate> estimates;
  std::string scoring;
  if (oracle) {
    scoring = "oracle-train";
    for (const auto& w : words) {
      const double p = train_lex.probability(alphabet.decode(w));
      estimates.push_back(floored_estimate(w, p > 0.0 ? std::log2(p) : kNegInf, 0));
    }
  } else if (model->ssm) {
    scoring = "monte-carlo";
    if (model->ssm->config().symbols != alphabet.size())
      throw ConfigError("eval: checkpoint alphabet does not match the data");
    RngStream rng(cfg.seed, "eval/marginals");
    estimates = estimate_marginals(*model->ssm, words, cfg.eval_K, rng);
  } else {
    scoring = "exact";
    for (const auto& w : words) estimates.push_back(floored_estimate(w, word_log2prob(*model->baseline, w), 0));
  }
  const auto by = by_word(alphabet, estimates);
  const CrossEntropy h_train = cross_entropy(train_lex.distribution(), by);
  const CrossEntropy h_test = cross_entropy(test_lex.distribution(), by);

  // Samples.
  std::vector<std::string> sample_text;
  std::vector<SymbolSeq> sample_seqs;
  const auto n_samples = static_cast<std::size_t>(cfg.samples);
  std::size_t truncated = 0;
  if (oracle) {
    const BatchSampler sampler(train_lex);
    RngStream rng(cfg.seed, "sample/symbols");
    for (std::size_t i = 0; i < n_samples; ++i) sample_seqs.push_back(sampler.draw(rng));
  } else {
    for (auto& g : sample_words(*model, cfg.seed, n_samples, opts.argmax)) {
      if (g.truncated) ++truncated;
      g.symbols.push_back(alphabet.eow());
      sample_seqs.push_back(std::move(g.symbols));
    }
  }
  for (const auto& s : sample_seqs) sample_text.push_back(alphabet.decode(s));
  const Coverage cov = coverage_metrics(sample_text, vocab);

  std::ostringstream rep;
  rep << "model.kind = " << (oracle ? "oracle" : cfg.kind == ModelKind::Ssm ? "ssm" : "baseline") << '\n';
  if (!oracle && cfg.kind == ModelKind::Ssm)
    rep << "model.flows = " << cfg.flow_g << "/" << cfg.flow_q << '\n' << "model.K = " << cfg.K << '\n';
  rep << "eval.seed = " << cfg.seed << '\n'
      << "eval.scoring = " << scoring << '\n'
      << "eval.K = " << (scoring == "monte-carlo" ? std::to_string(cfg.eval_K) : "na") << '\n'
      << "entropy.train_bits = " << num(train_lex.entropy_bits()) << '\n'
      << "entropy.test_bits = " << num(test_lex.entropy_bits()) << '\n'
      << "xent.train_bits = " << num(h_train.value) << '\n'
      << "xent.train_floored = " << h_train.floored << '\n'
      << "xent.test_bits = " << num(h_test.value) << '\n'
      << "xent.test_floored = " << h_test.floored << '\n'
      << "samples.n = " << n_samples << '\n'
      << "samples.argmax = " << (opts.argmax ? "true" : "false") << '\n'
      << "samples.truncated = " << truncated << '\n'
      << "coverage.in_vocab = " << num(cov.in_vocab) << '\n'
      << "coverage.unique_in_vocab = " << num(cov.unique_in_vocab) << '\n';

  std::string profile;
  if (!oracle && model->ssm) {
    RngStream rng(cfg.seed, "eval/mi");
    const MiReport mi = mutual_information_profile(*model->ssm, cfg.mi_M, cfg.mi_K, rng);
    rep << "mi.K = " << mi.inner << '\n'
        << "mi.M = " << mi.outer << '\n'
        << "mi.mean_bits = " << num(mi.mean) << '\n'
        << "mi.mean_realized_bits = " << num(mi.mean_realized) << '\n';
    profile = "t\tmi_bits\tsymbol_entropy_bits\n";
    for (std::size_t t = 0; t < mi.per_position.size(); ++t)
      profile += std::to_string(t + 1) + "\t" + num(mi.per_position[t]) + "\t" + num(mi.symbol_entropy[t]) + "\n";
  } else {
    rep << "mi.K = na\nmi.M = na\nmi.mean_bits = na\nmi.mean_realized_bits = na\n";
  }

  Lexicon full(alphabet);
  for (const auto& [w, c] : train_lex.counts()) full.add(w, c);
  for (const auto& [w, c] : test_lex.counts()) full.add(w, c);
  for (int n : cfg.ngrams) {
    rep << "ngram.full.pp" << n << " = " << num(ngram_perplexity(wb_train(full, n), sample_seqs)) << '\n';
    rep << "ngram.test.pp" << n << " = " << num(ngram_perplexity(wb_train(test_lex, n), sample_seqs)) << '\n';
  }

  const std::string report = rep.str();
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    write_text(fs::path(opts.out) / "report.txt", report);
    if (!profile.empty()) write_text(fs::path(opts.out) / "mi_profile.tsv", profile);
    std::string s;
    for (const auto& w : sample_text) s += w + "\n";
    write_text(fs::path(opts.out) / "samples.txt", s);
  }
  log << report;
  return report;
}

// ---------------------------------------------------------------------------

void cmd_sample(const SampleOptions& opts, std::ostream& out) {
  if (opts.ckpt.empty()) throw ConfigError("sample: --ckpt is required");
  Checkpoint ck = load_checkpoint(opts.ckpt);
  const Alphabet alphabet = ck.config.make_alphabet();
  const AnyModel model = AnyModel::bind(ck.config, std::move(ck.params));
  for (const auto& g : sample_words(model, opts.seed, opts.n, opts.argmax)) {
    out << alphabet.decode(g.symbols);
    if (g.truncated) out << kTruncationMarker;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
  CLI::App app{"Deep state space models for words"};
  app.require_subcommand(1);

  PrepareOptions prep;
  std::string split_mode = "token";
  auto* p = app.add_subcommand("prepare", "Build lexicon and train/test splits");
  p->add_option("--input", prep.input, "Raw text file (default: synthetic corpus)");
  p->add_option("--out", prep.out, "Output directory");
  p->add_option("--min-count", prep.min_count, "Minimum word count");
  p->add_option("--min-len", prep.min_len, "Minimum word length");
  p->add_option("--max-len", prep.max_len, "Maximum word length");
  p->add_option("--split", split_mode, "token or type")->check(CLI::IsMember({"token", "type"}));
  p->add_option("--test-fraction", prep.test_fraction, "Held-out fraction");
  p->add_option("--seed", prep.seed, "Split seed");
  p->add_option("--alphabet", prep.alphabet, "Letters of the alphabet");

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Config file");
  t->add_option("--out", tr.out, "Output directory");
  t->add_option("--resume", tr.resume, "Checkpoint to resume from");

  EvalOptions ev;
  std::string ngrams;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file");
  e->add_option("--train", ev.train, "Training split (default from config)");
  e->add_option("--test", ev.test, "Test split (default from config)");
  e->add_option("--K", ev.K, "Trajectories for marginal estimates");
  e->add_option("--mi-K", ev.mi_K, "Inner samples for mutual information");
  e->add_option("--mi-M", ev.mi_M, "Outer samples for mutual information");
  e->add_option("--ngrams", ngrams, "Comma-separated n-gram orders");
  e->add_option("--samples", ev.samples, "Number of generated words");
  e->add_option("--oracle", ev.oracle, "Score the training distribution itself ('train')");
  e->add_flag("--argmax", ev.argmax, "Argmax symbol decoding for samples");
  e->add_option("--seed", ev.seed, "Evaluation seed");
  e->add_option("--out", ev.out, "Report directory");

  SampleOptions sm;
  auto* s = app.add_subcommand("sample", "Generate words");
  s->add_option("--ckpt", sm.ckpt, "Checkpoint file")->required();
  s->add_option("-n", sm.n, "Number of words");
  s->add_flag("--argmax", sm.argmax, "Argmax symbol decoding");
  s->add_option("--seed", sm.seed, "Sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*p) {
      prep.split = split_mode == "type" ? SplitMode::Type : SplitMode::Token;
      cmd_prepare(prep, std::cout);
    } else if (*t) {
      cmd_train(tr, std::cout);
    } else if (*e) {
      if (!ngrams.empty()) {
        std::stringstream ss(ngrams);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            ev.ngrams.push_back(std::stoi(item));
          } catch (const std::exception&) {
            throw ConfigError("eval: bad --ngrams entry '" + item + "'");
          }
        }
      }
      cmd_eval(ev, std::cout);
    } else if (*s) {
      cmd_sample(sm, std::cout);
    }
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace dssm
