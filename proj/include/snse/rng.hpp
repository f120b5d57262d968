/// @file rng.hpp
/// @brief Seed derivation for reproducible per-sample random streams.
#pragma once

#include <cstdint>
#include <random>

namespace snse {

/// splitmix64 finalizer; decorrelates consecutive seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Stream seed for sample `index` under `master_seed`. Samples drawn from
/// distinct streams are independent of scheduling and worker count.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t index) {
  return mix64(master_seed ^ mix64(index + 1));
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(mix64(seed));
}

}  // namespace snse
