#pragma once

#include <cstdint>
#include <random>

namespace mpenssar {

// splitmix64 step; used to derive independent stream seeds from one master
// seed so that adding a consumer never perturbs the draws of another.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for sub-stream `stream` of master seed `seed`. Distinct streams give
// decorrelated generators; the mapping is fixed for reproducibility.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s = a ^ (stream * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  return splitmix64(s);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

}  // namespace mpenssar
