#pragma once

#include <cstdint>
#include <random>

namespace blockfl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent child seed for (parent, stream, index). Replications and
// sweep points draw their generators from here so that no two jobs share a
// stream and scheduling order never matters.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(parent ^ mix64(stream + 0x51ed270b27a1f4c5ULL)) + index);
}

namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kProtocol = 2;
inline constexpr std::uint64_t kTraining = 3;
inline constexpr std::uint64_t kReplication = 4;
inline constexpr std::uint64_t kOvertake = 5;
}  // namespace streams

}  // namespace blockfl
