// SPDX-License-Identifier: Apache-2.0
//
// Subcommands behind the `dssm` executable. Each command is also callable
// in-process so that tests can drive it without spawning a shell.
//
// Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
// 3 numeric abort during training.

#pragma once

#include "dssm/checkpoint.hpp"
#include "dssm/config.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dssm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

/// Appended to sampled words that hit t_max without emitting end-of-word.
inline constexpr char kTruncationMarker = '~';

struct PrepareOptions {
  std::string input;  // empty: synthetic corpus
  std::string out = "data";
  long min_count = 10;
  int min_len = 2;
  int max_len = 12;
  SplitMode split = SplitMode::Token;
  double test_fraction = 0.10;
  std::uint64_t seed = 1;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
};

/// Writes lexicon.tsv, train.tsv and test.tsv (and corpus.txt for the
/// synthetic default) into opts.out.
void cmd_prepare(const PrepareOptions& opts, std::ostream& log);

struct TrainOptions {
  std::string config;
  std::string out;  // overrides output.dir when non-empty
  std::string resume;
};

/// Writes config.txt, train_log.tsv and checkpoint.txt (rewritten after
/// every epoch) into the output directory.
void cmd_train(const TrainOptions& opts, std::ostream& log);

struct EvalOptions {
  std::string ckpt;
  std::string train;  // override data.train
  std::string test;   // override data.test
  long K = 0;         // 0: eval.K from the config
  int mi_K = 0;
  int mi_M = 0;
  std::vector<int> ngrams;
  int samples = 0;
  std::string oracle;  // "train": score the training distribution itself
  bool argmax = false;
  std::uint64_t seed = 0;  // 0: seed from the config
  std::string out;         // directory for report.txt and mi_profile.tsv
};

/// Returns the report text (also written to out/report.txt when out is set).
std::string cmd_eval(const EvalOptions& opts, std::ostream& log);

struct SampleOptions {
  std::string ckpt;
  std::size_t n = 10;
  bool argmax = false;
  std::uint64_t seed = 1;
};

void cmd_sample(const SampleOptions& opts, std::ostream& out);

/// Parses argv and dispatches; never throws.
int run_cli(int argc, char** argv);

}  // namespace dssm
