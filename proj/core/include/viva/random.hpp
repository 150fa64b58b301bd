#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace viva {

using Rng = std::mt19937_64;

// splitmix64 finaliser; derives independent child seeds from (seed, stream).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
void fill_standard_normal(Rng& rng, std::span<T> out) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out) v = static_cast<T>(normal(rng));
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace viva
