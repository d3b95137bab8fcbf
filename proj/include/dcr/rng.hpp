#pragma once

#include <cstdint>
#include <random>

namespace dcr {

// Deterministic generator used throughout; child streams are derived by
// splitmix64 mixing so per-sample generation is order-independent.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), engine_(seed) {}

  static uint64_t mix(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  Rng child(uint64_t stream) const { return Rng(mix(base_seed_, stream)); }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  uint64_t base_seed_;
  std::mt19937_64 engine_;
};

}  // namespace dcr
