#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace tlh {

// Seeded stream on top of std::mt19937_64, whose output sequence is fixed by
// the standard. Every conversion to floats/indices is done here rather than
// through <random> distributions, whose algorithms are implementation-defined,
// so a seed gives the same numbers on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    // Fisher-Yates, descending.
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent stream derived from this seed and a label.
  Rng derive(std::string_view label) const { return Rng(mix_seed(seed_, label)); }
  Rng derive(std::uint64_t salt) const;

  static std::uint64_t mix_seed(std::uint64_t seed, std::string_view label);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace tlh
