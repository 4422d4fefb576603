#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace hammer {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// FNV-1a, used to turn string identifiers into RNG key material.
constexpr std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ULL));
}

template <class... Rest>
constexpr std::uint64_t mix_keys(std::uint64_t a, std::uint64_t b, Rest... rest) noexcept {
  return mix_keys(mix_keys(a, b), static_cast<std::uint64_t>(rest)...);
}

/// Counter-based generator: the n-th draw is a pure function of (key, n), so
/// streams can be derived per sample without any shared state.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  constexpr std::uint64_t next_u64() noexcept { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller; consumes two draws.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace hammer
