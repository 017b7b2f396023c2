#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace handocc {

/// splitmix64 finalizer; used to fan one global seed out into independent
/// per-stage / per-item streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ stream) + index);
}

/// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stream tags for derive_seed. Fixed values: changing one changes every
/// dataset generated downstream.
namespace seed_stream {
inline constexpr std::uint64_t kShapes = 0x5348;
inline constexpr std::uint64_t kTrajectory = 0x5452;
inline constexpr std::uint64_t kOcclusion = 0x4f43;
inline constexpr std::uint64_t kSamples = 0x5341;
inline constexpr std::uint64_t kPairs = 0x5041;
inline constexpr std::uint64_t kTrainStep = 0x5453;
inline constexpr std::uint64_t kInit = 0x494e;
inline constexpr std::uint64_t kPoseNoise = 0x504e;
inline constexpr std::uint64_t kPredictor = 0x5052;
inline constexpr std::uint64_t kSurface = 0x5355;
}  // namespace seed_stream

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace handocc
