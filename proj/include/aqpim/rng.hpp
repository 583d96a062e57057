// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace aqpim {

// Counter-based randomness: every draw is a pure function of (seed, key...).
// Used wherever results must not depend on evaluation order.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_keys(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

// Uniform in [0, 1) with 53 bits of resolution.
inline double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline double counter_uniform(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return to_unit(mix_keys(seed, keys));
}

// Standard normal via Box-Muller over two derived counters.
inline double counter_normal(std::uint64_t key) {
  const double u1 = to_unit(splitmix64(key ^ 0x1234567ULL)) + 0x1.0p-54;
  const double u2 = to_unit(splitmix64(key ^ 0x89abcdefULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Small sequential generator (splitmix64 stream) for algorithms that consume
// randomness in a fixed order, e.g. k-means++ seeding.
class SeqRng {
 public:
  explicit SeqRng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return to_unit(next()); }
  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }
  double normal() { return counter_normal(next()); }

 private:
  std::uint64_t state_;
};

}  // namespace aqpim
