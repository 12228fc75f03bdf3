#pragma once

#include <cstdint>
#include <random>

namespace knit {

using Rng = std::mt19937_64;

/// Independent stream labels. Every random draw in the library comes from a
/// stream keyed by (seed, index, purpose), so results never depend on the
/// order in which patients or replicates are processed.
enum class StreamPurpose : std::uint64_t {
  Embedding = 1,
  MarginalsMC = 2,
  Sequence = 3,
  NullSequence = 4,
  PopulationMC = 5,
  Eigensolver = 6,
  BenchCell = 7,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index,
                                          StreamPurpose purpose) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ index);
  return splitmix64(h ^ static_cast<std::uint64_t>(purpose));
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t index, StreamPurpose purpose) {
  return Rng(stream_key(seed, index, purpose));
}

/// Seed for a derived sub-experiment, e.g. (master seed, grid cell, replicate).
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t cell,
                                           std::uint64_t replicate) noexcept {
  return splitmix64(splitmix64(master ^ splitmix64(cell + 0x51ED27ULL)) ^ replicate);
}

}  // namespace knit
