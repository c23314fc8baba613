// SPDX-License-Identifier: Apache-2.0
#include "dssm/rng.hpp"

#include <bit>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace dssm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t stream_key(std::uint64_t seed, std::string_view label) {
  return splitmix64(splitmix64(seed) ^ fnv1a(label));
}

RngStream::RngStream(std::uint64_t seed, std::string label)
    : seed_(seed), label_(std::move(label)), engine_(stream_key(seed_, label_)) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open_low() {
  return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Vec RngStream::normal(Index n) {
  Vec out(n);
  for (Index i = 0; i < n; ++i) out(i) = normal();
  return out;
}

Mat RngStream::normal(Index rows, Index cols) {
  Mat out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) out(i, j) = normal();
  return out;
}

std::size_t RngStream::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // u landed in the rounding gap at the top; return the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

RngStream RngStream::derive(std::string_view child) const {
  std::string lbl = label_;
  lbl += '/';
  lbl += child;
  return RngStream(seed_, std::move(lbl));
}

std::string RngStream::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << std::hex
     << std::bit_cast<std::uint64_t>(spare_);
  return os.str();
}

void RngStream::set_state(const std::string& text) {
  std::istringstream is(text);
  int spare_flag = 0;
  std::uint64_t bits = 0;
  is >> engine_ >> spare_flag >> std::hex >> bits;
  if (!is) throw ConfigError("malformed RNG state for stream '" + label_ + "'");
  has_spare_ = spare_flag != 0;
  spare_ = std::bit_cast<double>(bits);
}

bool operator==(const RngStream& a, const RngStream& b) {
  return a.engine_ == b.engine_ && a.has_spare_ == b.has_spare_ &&
         (!a.has_spare_ || std::bit_cast<std::uint64_t>(a.spare_) ==
                               std::bit_cast<std::uint64_t>(b.spare_));
}

}  // namespace dssm
