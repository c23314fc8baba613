// SPDX-License-Identifier: Apache-2.0
#include "dssm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace dssm {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: " + key + " = '" + value + "' (expected " + expected + ")");
}

template <typename T>
T parse_int(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad(key, v, "a number");
    return x;
  } catch (const std::logic_error&) {
    bad(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(key, v, "true or false");
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define DSSM_INT(K, M, T)                                                          \
  Field{K, [](RunConfig& c, const std::string& v) { c.M = parse_int<T>(K, v); }, \
        [](const RunConfig& c) { return std::to_string(c.M); }}
#define DSSM_DOUBLE(K, M)                                                        \
  Field{K, [](RunConfig& c, const std::string& v) { c.M = parse_double(K, v); }, \
        [](const RunConfig& c) { return fmt_double(c.M); }}
#define DSSM_BOOL(K, M)                                                        \
  Field{K, [](RunConfig& c, const std::string& v) { c.M = parse_bool(K, v); }, \
        [](const RunConfig& c) { return fmt_bool(c.M); }}
#define DSSM_STRING(K, M)                                             \
  Field{K, [](RunConfig& c, const std::string& v) { c.M = v; }, \
        [](const RunConfig& c) { return c.M; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"model.kind",
            [](RunConfig& c, const std::string& v) {
              if (v == "ssm") c.kind = ModelKind::Ssm;
              else if (v == "baseline") c.kind = ModelKind::Baseline;
              else bad("model.kind", v, "ssm or baseline");
            },
            [](const RunConfig& c) {
              return std::string(c.kind == ModelKind::Ssm ? "ssm" : "baseline");
            }},
      DSSM_INT("model.d", d, Index),
      DSSM_INT("model.d_emb", d_emb, Index),
      DSSM_INT("model.t_max", t_max, int),
      DSSM_BOOL("model.tie_embeddings", tie_embeddings),
      Field{"model.conditioning",
            [](RunConfig& c, const std::string& v) {
              if (v == "backward") c.conditioning = ProposalConditioning::BackwardOnly;
              else if (v == "backward_plus_prev_state")
                c.conditioning = ProposalConditioning::BackwardPlusPrevState;
              else bad("model.conditioning", v, "backward or backward_plus_prev_state");
            },
            [](const RunConfig& c) {
              return std::string(c.conditioning == ProposalConditioning::BackwardOnly
                                     ? "backward"
                                     : "backward_plus_prev_state");
            }},
      Field{"model.rnn",
            [](RunConfig& c, const std::string& v) {
              if (v == "backward") c.rnn = RnnMode::Backward;
              else if (v == "bidirectional") c.rnn = RnnMode::Bidirectional;
              else bad("model.rnn", v, "backward or bidirectional");
            },
            [](const RunConfig& c) {
              return std::string(c.rnn == RnnMode::Backward ? "backward" : "bidirectional");
            }},
      DSSM_STRING("model.peek", peek),
      DSSM_INT("model.proposal_hidden", proposal_hidden, Index),
      DSSM_BOOL("model.shared_flow", shared_flow),
      DSSM_STRING("flow.g.kind", flow_g),
      DSSM_STRING("flow.q.kind", flow_q),
      DSSM_BOOL("flow.g.inverse", flow_g_inverse),
      DSSM_BOOL("flow.q.inverse", flow_q_inverse),
      DSSM_DOUBLE("flow.delta", flow_delta),
      DSSM_INT("train.K", K, int),
      DSSM_INT("train.batch", batch, int),
      DSSM_INT("train.epochs", epochs, int),
      DSSM_INT("train.steps_per_epoch", steps_per_epoch, int),
      DSSM_DOUBLE("train.lr", lr),
      DSSM_DOUBLE("train.beta1", beta1),
      DSSM_DOUBLE("train.beta2", beta2),
      DSSM_DOUBLE("train.eps", adam_eps),
      DSSM_DOUBLE("train.clip", clip),
      DSSM_BOOL("train.detach_resampled", detach_resampled),
      DSSM_INT("train.log_mi_M", log_mi_M, int),
      DSSM_STRING("data.train", train_path),
      DSSM_STRING("data.test", test_path),
      DSSM_STRING("data.alphabet", alphabet),
      Field{"split.mode",
            [](RunConfig& c, const std::string& v) {
              if (v == "token") c.split_mode = SplitMode::Token;
              else if (v == "type") c.split_mode = SplitMode::Type;
              else bad("split.mode", v, "token or type");
            },
            [](const RunConfig& c) {
              return std::string(c.split_mode == SplitMode::Token ? "token" : "type");
            }},
      DSSM_DOUBLE("split.fraction", split_fraction),
      DSSM_INT("split.seed", split_seed, std::uint64_t),
      DSSM_INT("eval.K", eval_K, long),
      DSSM_INT("eval.mi_K", mi_K, int),
      DSSM_INT("eval.mi_M", mi_M, int),
      DSSM_INT("eval.samples", samples, int),
      Field{"eval.ngrams",
            [](RunConfig& c, const std::string& v) {
              c.ngrams.clear();
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) c.ngrams.push_back(parse_int<int>("eval.ngrams", trim(item)));
            },
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.ngrams.size(); ++i) s += (i ? "," : "") + std::to_string(c.ngrams[i]);
              return s;
            }},
      DSSM_INT("seed", seed, std::uint64_t),
      DSSM_STRING("output.dir", out_dir),
  };
  return table;
}

#undef DSSM_INT
#undef DSSM_DOUBLE
#undef DSSM_BOOL
#undef DSSM_STRING

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  if (kind == ModelKind::Ssm) {
    model_config().validate();
  } else {
    baseline_config().validate();
  }
  if (peek != "auto" && peek != "true" && peek != "false")
    throw ConfigError("config: model.peek must be auto, true or false");
  if (batch < 1) throw ConfigError("config: train.batch must be >= 1");
  if (epochs < 0) throw ConfigError("config: train.epochs must be >= 0");
  if (steps_per_epoch < 1) throw ConfigError("config: train.steps_per_epoch must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("config: train.lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("config: Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("config: train.eps must be > 0");
  if (!(clip > 0.0)) throw ConfigError("config: train.clip must be > 0");
  if (log_mi_M < 0) throw ConfigError("config: train.log_mi_M must be >= 0");
  if (!(split_fraction >= 0.0 && split_fraction <= 1.0))
    throw ConfigError("config: split.fraction must lie in [0, 1]");
  if (eval_K < 1) throw ConfigError("config: eval.K must be >= 1");
  if (mi_K < 2) throw ConfigError("config: eval.mi_K must be >= 2");
  if (mi_M < 1) throw ConfigError("config: eval.mi_M must be >= 1");
  if (samples < 1) throw ConfigError("config: eval.samples must be >= 1");
  for (int n : ngrams)
    if (n < 1) throw ConfigError("config: eval.ngrams orders must be >= 1");
  if (alphabet.empty()) throw ConfigError("config: data.alphabet must not be empty");
  Alphabet check(alphabet);
  (void)check;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.d = d;
  m.d_emb = d_emb;
  m.symbols = static_cast<Index>(alphabet.size()) + 1;
  m.fg = FlowDef::parse(flow_g, d, flow_delta);
  m.fg.inverse_parametrized = flow_g_inverse;
  m.fq = FlowDef::parse(flow_q, d, flow_delta);
  m.fq.inverse_parametrized = flow_q_inverse;
  m.shared_flow = shared_flow;
  m.conditioning = conditioning;
  m.rnn = rnn;
  m.K = K;
  m.peek = peek == "true" || (peek == "auto" && K > 1);
  m.t_max = t_max;
  m.tie_embeddings = tie_embeddings;
  m.proposal_hidden = proposal_hidden;
  m.detach_resampled = detach_resampled;
  return m;
}

BaselineConfig RunConfig::baseline_config() const {
  BaselineConfig b;
  b.d = d;
  b.d_emb = d_emb;
  b.symbols = static_cast<Index>(alphabet.size()) + 1;
  b.t_max = t_max;
  return b;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.adam.lr = lr;
  t.adam.beta1 = beta1;
  t.adam.beta2 = beta2;
  t.adam.eps = adam_eps;
  t.batch = batch;
  t.clip_norm = clip;
  t.steps_per_epoch = steps_per_epoch;
  return t;
}

RunConfig parse_config(std::istream& is) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (f.key == key) field = &f;
    if (!field) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    field->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  return parse_config(is);
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace dssm
