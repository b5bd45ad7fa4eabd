#pragma once

#include <cstdint>
#include <random>

namespace deeptruck {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for item `index` of a job seeded with `seed`.
inline Rng stream_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  return Rng(splitmix64(splitmix64(seed ^ splitmix64(salt)) + index));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean, double stddev) {
  if (stddev <= 0.0) return mean;
  return std::normal_distribution<double>(mean, stddev)(rng);
}

}  // namespace deeptruck
