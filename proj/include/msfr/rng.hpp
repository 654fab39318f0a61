#pragma once

#include <cstdint>
#include <random>

namespace msfr {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent streams from one seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Fixed seed-splitting rule: a user seed plus a (stream, substream) pair
/// always yields the same generator state, so adding concurrency or
/// reordering work never changes sampled values.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0) {
  std::uint64_t s = mix64(seed);
  s = mix64(s ^ mix64(stream * 0xd6e8feb86659fd93ULL));
  s = mix64(s ^ mix64(substream * 0xa3b195354a39b70dULL));
  return Rng(s);
}

// Stream tags for the modules that draw random numbers.
namespace stream {
inline constexpr std::uint64_t kTruthPhi = 1;
inline constexpr std::uint64_t kTruthLambda = 2;
inline constexpr std::uint64_t kTruthPsi = 3;
inline constexpr std::uint64_t kTruthBeta = 4;
inline constexpr std::uint64_t kDataCovariates = 5;
inline constexpr std::uint64_t kDataNoise = 6;
inline constexpr std::uint64_t kFoldShuffle = 7;
}  // namespace stream

}  // namespace msfr
