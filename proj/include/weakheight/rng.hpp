#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace weakheight {

/// Engine threaded explicitly through every stochastic routine.
using Rng = std::mt19937_64;

/// Full-range 64-bit generators; the draw helpers below rely on it so that
/// results do not depend on the standard library's distribution internals.
template <typename G>
concept Engine64 = std::uniform_random_bit_generator<G> && G::min() == 0 &&
                   G::max() == std::numeric_limits<std::uint64_t>::max();

/// Uniform integer in [0, bound). bound must be positive.
template <Engine64 G>
std::uint64_t draw_below(G& rng, std::uint64_t bound) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * bound) >> 64);
}

/// Uniform double in [0, 1).
template <Engine64 G>
double draw_unit(G& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// splitmix64 finaliser; derives independent per-item seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace weakheight
