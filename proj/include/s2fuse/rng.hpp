#pragma once

#include <cstdint>
#include <random>

namespace s2fuse {

/// Portable seeded generator: std::mt19937_64 (bit-exact by the standard)
/// feeding a hand-written 53-bit uniform and a Box-Muller normal transform.
/// std::normal_distribution is avoided because its output is not specified.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  /// Standard normal variate; values are produced in Box-Muller pairs.
  double normal();

  /// Independent stream derived from this seed (e.g. seed + image index).
  SeededRng derive(std::uint64_t offset) const { return SeededRng(seed_ + offset); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace s2fuse
