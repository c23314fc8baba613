// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dssm/numcore.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace dssm {

/// A named pseudo-random stream. (seed, label) fully determines the sequence.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Normals use the basic Box-Muller transform written out
/// here (std::normal_distribution is implementation-defined), consuming two
/// uniforms per pair and caching the second variate.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1].
  double uniform_open_low();
  double normal();
  Vec normal(Index n);
  Mat normal(Index rows, Index cols);
  /// Index drawn with probability proportional to weights (non-negative).
  std::size_t categorical(std::span<const double> weights);

  /// Independent child stream keyed by the parent's (seed, label/child).
  RngStream derive(std::string_view child) const;

  /// Full engine state as text; set_state restores it exactly.
  std::string state() const;
  void set_state(const std::string& text);

  friend bool operator==(const RngStream& a, const RngStream& b);

 private:
  std::uint64_t seed_;
  std::string label_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t stream_key(std::uint64_t seed, std::string_view label);

}  // namespace dssm
