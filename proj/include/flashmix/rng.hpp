#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace flashmix {

/// SplitMix64 generator.
///
/// Every random decision in the library goes through this generator so that
/// datasets, buffers and training runs are reproducible bit-for-bit, and so a
/// reimplementation in another language can reproduce them from the
/// algorithm alone:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// Derived quantities:
///   uniform()        = (next() >> 11) * 2^-53                  in [0, 1)
///   index(n)         = next() % n, rejecting draws >= 2^64 - (2^64 mod n)
///   normal()         = Box-Muller on u1 = 1 - uniform(), u2 = uniform(),
///                      sqrt(-2 ln u1) * cos(2 pi u2); one draw pair per call
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  std::uint64_t index(std::uint64_t n) noexcept {
    if (n <= 1) {
      return 0;
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % n + 1) % n;
    std::uint64_t r = next();
    while (r > limit) {
      r = next();
    }
    return r % n;
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// Deterministically mixes a seed with a stream key (e.g. a scan index) into
/// an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) noexcept {
  SplitMix64 a(seed ^ (key * 0xD6E8FEB86659FD93ULL));
  a.next();
  return a.next();
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key1, std::uint64_t key2) noexcept {
  return derive_seed(derive_seed(seed, key1), key2);
}

}  // namespace flashmix
