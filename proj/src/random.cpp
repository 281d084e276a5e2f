#include "fsner/random.hpp"

#include <cmath>
#include <numbers>

namespace fsner {

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept {
  // FNV-1a over the label, then mixed with the root.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(root ^ splitmix64(h));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index) noexcept {
  return splitmix64(derive_seed(root, label) + splitmix64(index + 1));
}

std::size_t Rng::below(std::size_t n) noexcept {
  if (n <= 1) return 0;
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace fsner
