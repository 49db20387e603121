#pragma once

// Reproducible random streams. Every draw is built from raw 64-bit outputs of
// std::mt19937_64 (whose sequence is fixed by the standard), so the same
// (seed, index) pair yields identical numbers on every conforming platform.
// Distribution objects from <random> are deliberately avoided because their
// algorithms are implementation-defined.

#include <cmath>
#include <cstdint>
#include <random>

namespace qfactor {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

class RngStream {
 public:
  explicit RngStream(std::uint64_t state) : engine_(state) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0,1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard Cauchy via the inverse CDF.
  double cauchy() { return std::tan(M_PI * (uniform_open() - 0.5)); }

  /// Student t with integer degrees of freedom: Z / sqrt(chi2_df / df).
  double student(int df) {
    const double z = normal();
    double chi2 = 0.0;
    for (int k = 0; k < df; ++k) {
      const double g = normal();
      chi2 += g * g;
    }
    return z / std::sqrt(chi2 / static_cast<double>(df));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Independent, reproducible sub-stream for replication `index` under `seed`.
inline RngStream rng_stream(std::uint64_t seed, std::uint64_t index) {
  return RngStream(detail::splitmix64(detail::splitmix64(seed) ^ detail::splitmix64(index + 0x632BE59BD9B4E019ULL)));
}

}  // namespace qfactor
