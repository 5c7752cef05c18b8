#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace cardiofuse {

/// SplitMix64 finalizer (Steele, Lea & Flood). Bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t z);

/// Key for an independent stream, derived from a seed and up to two labels
/// (e.g. split id and record index). Distinct label tuples give unrelated streams.
std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Counter-based SplitMix64 generator: output n is mix64(key + (n+1)·0x9E3779B97F4A7C15).
///
/// Normal variates use Box–Muller on two consecutive uniforms, keeping only
/// the cosine branch so every draw consumes exactly two words.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key) : state_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next(); }

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

  /// Fisher–Yates, defined here so the permutation does not depend on the standard library.
  void shuffle(std::span<std::size_t> values);

 private:
  std::uint64_t state_;
};

}  // namespace cardiofuse
