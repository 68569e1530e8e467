#pragma once

#include <cstdint>
#include <random>

namespace fsalloc {

// mt19937_64 output is fixed by the standard but the distribution classes are
// not, so uniform draws are built from raw bits to keep runs reproducible
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform on (lo, hi].
  double uniform_left_open(double lo, double hi) { return hi - (hi - lo) * uniform(); }
  std::uint64_t bits() { return engine_(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fsalloc
