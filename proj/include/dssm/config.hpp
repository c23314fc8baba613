// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat `key = value` text with dotted keys. Blank lines
// and `#` comments are ignored; unknown keys and malformed values are
// rejected with ConfigError before any compute starts.

#pragma once

#include "dssm/baseline.hpp"
#include "dssm/corpus.hpp"
#include "dssm/ssm.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace dssm {

enum class ModelKind { Ssm, Baseline };

struct RunConfig {
  ModelKind kind = ModelKind::Ssm;

  // model.*
  Index d = 8;
  Index d_emb = 8;
  int t_max = 13;
  bool tie_embeddings = false;
  ProposalConditioning conditioning = ProposalConditioning::BackwardOnly;
  RnnMode rnn = RnnMode::Backward;
  /// auto, true or false; auto enables the generative peek when K > 1.
  std::string peek = "auto";
  Index proposal_hidden = 0;
  bool shared_flow = false;

  // flow.*
  std::string flow_g = "tril";
  std::string flow_q = "tril";
  bool flow_g_inverse = true;
  bool flow_q_inverse = false;
  double flow_delta = 0.1;

  // train.*
  int K = 1;
  int batch = 64;
  int epochs = 10;
  int steps_per_epoch = 100;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip = 5.0;
  bool detach_resampled = false;
  /// Outer/inner samples for the per-epoch mutual-information log columns
  /// (0 disables them).
  int log_mi_M = 50;

  // data.*
  std::string train_path;
  std::string test_path;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";

  // split.*
  SplitMode split_mode = SplitMode::Token;
  double split_fraction = 0.10;
  std::uint64_t split_seed = 1;

  // eval.*
  long eval_K = 10000;
  int mi_K = 20;
  int mi_M = 500;
  int samples = 1000;
  std::vector<int> ngrams{2, 3, 4, 5};

  std::uint64_t seed = 1;
  std::string out_dir = "run";

  void validate() const;
  ModelConfig model_config() const;
  BaselineConfig baseline_config() const;
  TrainConfig train_config() const;
  Alphabet make_alphabet() const { return Alphabet(alphabet); }
};

RunConfig parse_config(std::istream& is);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical text form: every key, fixed order, round-trips through parse.
std::string format_config(const RunConfig& cfg);

/// Keys accepted by parse_config, in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace dssm
