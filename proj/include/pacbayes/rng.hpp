#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pacbayes {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `stream` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x51ed2701ULL));
}

// Stream ids; every seeded consumer draws from its own stream.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kSubsample = 3;
inline constexpr std::uint64_t kLabels = 4;
inline constexpr std::uint64_t kSyntheticTrain = 5;
inline constexpr std::uint64_t kSyntheticTest = 6;
inline constexpr std::uint64_t kPowerIteration = 7;
}  // namespace streams

/// Uniform index in [0, n) by rejection on the raw 64-bit output, so the
/// sequence does not depend on the standard library's distribution code.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal draws by the Marsaglia polar method.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform_unit(rng) - 1.0;
      v = 2.0 * uniform_unit(rng) - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pacbayes
