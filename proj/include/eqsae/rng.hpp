#pragma once

#include <cstdint>
#include <string_view>

namespace eqsae {

// SplitMix64. Every random draw in the project flows through this so runs
// are reproducible bit-for-bit on any platform, unlike <random>'s
// distributions whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). Modulo bias is < n / 2^64, irrelevant at our sizes.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Uniform double in [0, 1), 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(T* data, std::size_t n) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      T tmp = data[i - 1];
      data[i - 1] = data[j];
      data[j] = tmp;
    }
  }

 private:
  std::uint64_t state_;
};

// FNV-1a based stage-seed derivation: stages are reproducible in isolation
// given only the global seed and their identity.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage,
                          std::string_view detail, std::uint64_t index = 0);

}  // namespace eqsae
