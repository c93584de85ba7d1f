#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tse {

/// Deterministic RNG helpers. All randomness in the toolkit flows through
/// mt19937_64 plus these hand-rolled transforms, so results are bit-identical
/// across platforms and standard-library versions (std::uniform_real_distribution
/// and friends are not required to produce the same stream everywhere).
using RngEngine = std::mt19937_64;

/// Uniform in [0, 1) with 53 random bits.
inline double uniform01(RngEngine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(RngEngine& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform index in [0, n). n must be > 0.
inline std::size_t uniform_index(RngEngine& rng, std::size_t n) {
  // Rejection-free multiply-shift; bias is < 2^-53 for any practical n.
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Exponential with the given rate (events per unit). rate must be > 0.
inline double exponential(RngEngine& rng, double rate) {
  return -std::log(1.0 - uniform01(rng)) / rate;
}

/// In-place Fisher-Yates shuffle with the deterministic index helper.
template <typename Vec>
void shuffle(Vec& v, RngEngine& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Derives an independent stream from a base seed and a stream tag.
/// Used to decouple e.g. mainline and ramp arrival randomness so that
/// changing one scenario knob does not perturb unrelated draws.
inline RngEngine seeded_stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return RngEngine(seq);
}

} // namespace tse
