#pragma once

#include <cstdint>
#include <random>

namespace npcf {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
inline std::uint64_t mix_bits(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent substream seed from a root seed. All randomness in a
// run flows from one root, namespaced per driver / rollout / purpose, so
// parallel schedules cannot change results.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return mix_bits(mix_bits(root ^ mix_bits(stream)) + index);
}

}  // namespace npcf
