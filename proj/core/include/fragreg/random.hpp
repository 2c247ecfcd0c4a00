// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#pragma once

#include <cstdint>
#include <limits>

namespace fragreg {

// splitmix64: tiny counter-based generator. Used to derive independent,
// order-insensitive RNG streams (one per pixel, per trial, per wire, ...)
// from a master seed, and as a UniformRandomBitGenerator for the standard
// library distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Mixes a seed with stream identifiers so sub-streams are decorrelated.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0) {
  SplitMix64 g(seed ^ (a * 0xd1342543de82ef95ULL) ^
               (b * 0xaf251af3b0f025b5ULL));
  g();
  return g();
}

}  // namespace fragreg
