#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dacdm {

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// One round of splitmix64; used to decorrelate derived seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream seed for (master seed, stage tag, index). Every stochastic
/// stage draws from its own stream so stages can be rerun in isolation.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::vector<double> normal_vec(std::size_t dim);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dacdm
