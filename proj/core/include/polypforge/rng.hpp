#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>

namespace polypforge {

/// Seeded pseudo-random source shared by every stochastic component. All
/// draws go through the standard library distributions so a fixed seed gives
/// identical streams on the same toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::span<T> items) {
    std::shuffle(items.begin(), items.end(), engine_);
  }

  /// Derives an independent child seed; used to give each job its own stream.
  std::uint64_t fork() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a salt (SplitMix64 finalizer).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace polypforge
