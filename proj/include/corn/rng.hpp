//
// Copyright 2025 The corn-dsgd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

namespace corn {

// SplitMix64 finalizer, used to derive independent sub-seeds from a master
// seed without any shared state.
inline constexpr uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr uint64_t derive_seed(uint64_t master, uint64_t tag) {
  return mix64(master ^ mix64(tag));
}

// Threefry-2x64, 20 rounds (Salmon et al., "Parallel random numbers: as easy
// as 1, 2, 3"). A pure function from (key, counter) to 128 random bits, so
// every agent reproduces the exact same draw from the shared seed without
// communicating, and any (iteration, index) cell is addressable in O(1).
struct Threefry2x64 {
  static constexpr uint64_t kParity = 0x1BD11BDAA9FC1A22ULL;

  static constexpr uint64_t rotl(uint64_t x, int r) {
    return (x << r) | (x >> (64 - r));
  }

  static constexpr std::pair<uint64_t, uint64_t> block(uint64_t key0,
                                                       uint64_t key1,
                                                       uint64_t ctr0,
                                                       uint64_t ctr1) {
    constexpr int kRot[8] = {16, 42, 12, 31, 16, 32, 24, 21};
    const uint64_t ks[3] = {key0, key1, kParity ^ key0 ^ key1};
    uint64_t x0 = ctr0 + ks[0];
    uint64_t x1 = ctr1 + ks[1];
    for (int r = 0; r < 20; ++r) {
      x0 += x1;
      x1 = rotl(x1, kRot[r % 8]);
      x1 ^= x0;
      if ((r + 1) % 4 == 0) {
        const uint64_t s = static_cast<uint64_t>((r + 1) / 4);
        x0 += ks[s % 3];
        x1 += ks[(s + 1) % 3] + s;
      }
    }
    return {x0, x1};
  }
};

// Counter-based generator keyed by (seed, stream). Draws are indexed by a
// two-word counter; identical (seed, stream, hi, lo) always yields the
// identical value, bit for bit.
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : key0_(seed), key1_(stream) {}

  uint64_t bits(uint64_t hi, uint64_t lo) const {
    return Threefry2x64::block(key0_, key1_, lo, hi).first;
  }

  // Uniform on [0, 1), 53-bit mantissa.
  double uniform(uint64_t hi, uint64_t lo) const {
    return static_cast<double>(bits(hi, lo) >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes one counter cell (both lanes of
  // the Threefry block), keeping normals independently addressable.
  double normal(uint64_t hi, uint64_t lo) const {
    const auto [lane0, lane1] = Threefry2x64::block(key0_, key1_, lo, hi);
    // u1 in (0, 1] so the log is finite; u2 in [0, 1).
    const double u1 =
        (static_cast<double>(lane0 >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(lane1 >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Unbiased-enough integer in [0, bound) via 128-bit multiply-shift.
  uint64_t uniform_int(uint64_t hi, uint64_t lo, uint64_t bound) const {
    if (bound == 0) throw std::invalid_argument("uniform_int: bound must be > 0");
    const unsigned __int128 prod =
        static_cast<unsigned __int128>(bits(hi, lo)) * bound;
    return static_cast<uint64_t>(prod >> 64);
  }

  uint64_t seed() const { return key0_; }
  uint64_t stream() const { return key1_; }

 private:
  uint64_t key0_;
  uint64_t key1_;
};

// Sequential view over a CounterRng with a fixed hi-word: for rejection
// samplers whose draw count is data dependent (gamma, resampling loops).
class RngStream {
 public:
  RngStream(const CounterRng& rng, uint64_t hi) : rng_(rng), hi_(hi) {}

  double uniform() { return rng_.uniform(hi_, next_++); }
  double normal() { return rng_.normal(hi_, next_++); }
  uint64_t bits() { return rng_.bits(hi_, next_++); }
  uint64_t uniform_int(uint64_t bound) {
    return rng_.uniform_int(hi_, next_++, bound);
  }

  // Marsaglia-Tsang gamma sampler, shape > 0, unit scale.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u > 0 ? u : 0x1.0p-53, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      const double x = normal();
      const double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      const double v = t * t * t;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

 private:
  CounterRng rng_;
  uint64_t hi_;
  uint64_t next_ = 0;
};

}  // namespace corn
