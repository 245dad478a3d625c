#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "fluidsense/numerics/types.hpp"

namespace fluidsense::numerics {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Seeded random stream identified by (seed, stream id).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Distributions are implemented here (not via <random>
/// distributions) so draws are identical across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    const std::uint64_t a = detail::splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
    const std::uint64_t b = detail::splitmix64(a ^ stream);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent child stream; depends only on (seed, stream, tag).
  RngStream derive(std::uint64_t tag) const {
    return RngStream(detail::splitmix64(seed_ ^ detail::splitmix64(stream_ ^ 0x51ed2701ULL)), tag);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  /// Integer uniform on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  /// Standard normal via Box-Muller, caching the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(ang);
    has_spare_ = true;
    return r * std::cos(ang);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline RealVector sample_standard_normal(RngStream& rng, Eigen::Index n) {
  RealVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

/// CN(0, 1) entries: real and imaginary parts N(0, 1/2).
inline ComplexVector sample_standard_complex_gaussian(RngStream& rng, Eigen::Index n) {
  if (n < 1) throw ConfigError("sample_standard_complex_gaussian: n must be >= 1");
  ComplexVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = rng.normal() * std::numbers::sqrt2 * 0.5;
    const double im = rng.normal() * std::numbers::sqrt2 * 0.5;
    v[i] = Complex(re, im);
  }
  return v;
}

}  // namespace fluidsense::numerics
