#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace fsner {

// Portable seeded randomness. The standard distributions are
// implementation-defined, so everything here is built on splitmix64 to keep
// artifacts bit-identical across toolchains.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Labeled fan-out of a root seed: derive_seed(root, "init") and
// derive_seed(root, "dropout") are independent but reproducible.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept;
std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index) noexcept;

// Uniform double in [0, 1) from a counter-based stream.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t counter) noexcept {
  return static_cast<double>(splitmix64(seed ^ splitmix64(counter)) >> 11) * 0x1.0p-53;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64(state_);
  }
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n).
  std::size_t below(std::size_t n) noexcept;
  // Standard normal via Box-Muller.
  double normal() noexcept;

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace fsner
