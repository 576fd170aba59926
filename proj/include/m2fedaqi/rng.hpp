#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace m2fedaqi {

/// Counter-based random stream. Output i is a pure function of (key, i), and
/// child streams are derived by hashing a label into the key, so each
/// stochastic site (init, shuffle, dropout, partition) owns an independent
/// sequence. Satisfies UniformRandomBitGenerator for use with <random>.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed = 0);

  RandomStream derive(std::string_view label) const;
  RandomStream derive(std::uint64_t index) const;

  result_type operator()();

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller, one value per call).
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

 private:
  RandomStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace m2fedaqi
