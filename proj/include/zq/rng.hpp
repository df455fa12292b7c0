// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace zq {

/// Deterministic splitmix64 generator.
///
/// The raw 64-bit stream depends only on the seed, so it is identical on
/// every platform. `normal()` uses Box-Muller on top of the raw stream and
/// therefore also relies on the platform's `log`/`cos`/`sqrt`.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) via multiply-shift; n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child generator; used to give each consumer its own stream.
  Rng fork() { return Rng(next_u64()); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace zq
