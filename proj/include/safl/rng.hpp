#pragma once

#include <cstdint>
#include <random>

namespace safl {

// splitmix64 finalizer; decorrelates derived seeds
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derive an independent seed stream from a base seed and context tags
// (stage, round, client, ...). Same inputs -> same stream, always.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t z = mix64(base ^ 0x853c49e6748fea9bull);
  z = mix64(z ^ mix64(a));
  z = mix64(z ^ mix64(b));
  z = mix64(z ^ mix64(c));
  return z;
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace safl
