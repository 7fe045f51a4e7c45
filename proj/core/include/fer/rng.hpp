#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace fer {

/// Counter-based 64-bit generator.
///
/// The n-th output (n = 0, 1, ...) of a stream with key k is
///
///     mix64(k + (n + 1) * 0x9E3779B97F4A7C15)
///
/// where mix64 is the SplitMix64 finalizer:
///
///     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     z =  z ^ (z >> 31)
///
/// All arithmetic is modulo 2^64. Independent streams for the data,
/// init and batching stages are obtained with derive().
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

  static std::uint64_t mix64(std::uint64_t z);

  /// Sub-stream key: mix64(key ^ fnv1a64(label)).
  static std::uint64_t derive(std::uint64_t key, std::string_view label);
  CounterRng child(std::string_view label) const { return CounterRng(derive(key_, label)); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits: (next_u64() >> 11) * 2^-53.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection of the biased tail; n > 0.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; consumes exactly two outputs.
  double normal();

  /// Normal(0, sigma) resampled until |x| <= 2 sigma.
  double truncated_normal(double sigma);

  /// Fisher-Yates, iterating i from size-1 down to 1 with j = below(i + 1).
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fer
