// SPDX-License-Identifier: Apache-2.0
//
// Text checkpoints. Layout:
//
//   dssm-checkpoint 1
//   config <n>            followed by n `key = value` lines
//   alphabet <letters>
//   epoch <e>
//   step <s>
//   param <name> <rows> <cols>   followed by rows lines of %.17g values
//   adam <step> <lr> <beta1> <beta2> <eps>
//   adam.m <name> <rows> <cols>  (one per parameter, same layout as param)
//   adam.v <name> <rows> <cols>
//   rng <label> <engine state...>
//   end
//
// Values are printed with 17 significant digits so that load followed by
// save reproduces the file byte for byte.

#pragma once

#include "dssm/config.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dssm {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  ParamStore params;
  AdamState adam;
  int epoch = 0;
  /// (label, RngStream::state()) pairs.
  std::vector<std::pair<std::string, std::string>> rng;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
/// Throws ConfigError on malformed input or a version mismatch.
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dssm
