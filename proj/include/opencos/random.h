#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace opencos {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream from a seed and a key path, so a draw is
/// determined by what it is for rather than by how many draws preceded it.
inline Rng keyed_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t state = mix64(seed);
  for (std::uint64_t k : keys) state = mix64(state ^ mix64(k + 0x632be59bd9b4e019ULL));
  return Rng(state);
}

// Stream tags.
enum class Stream : std::uint64_t {
  kInit = 1,
  kGeometry,
  kLabeledDraw,
  kUnlabeledDraw,
  kTestDraw,
  kPretrainBatch,
  kAugment,
  kLinearEval,
  kTrainBatch,
  kExperiment,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace opencos
