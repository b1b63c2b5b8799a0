#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace podd {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hashes a seed together with a list of stream identifiers (step index,
/// purpose tag, model slot...) into an independent 64-bit seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t s : stream) h = splitmix64(h ^ splitmix64(s + 0x632be59bd9b4e019ULL));
  return h;
}

// Purpose tags for derive_seed.
enum class SeedTag : std::uint64_t {
  kPoster = 1,
  kModelInit = 2,
  kUnroll = 3,
  kBatches = 4,
  kEvalModel = 5,
  kEvalBatches = 6,
  kCoreset = 7,
  kRandomOrder = 8,
  kSynthetic = 9,
};

inline std::uint64_t tag(SeedTag t) { return static_cast<std::uint64_t>(t); }

}  // namespace podd
