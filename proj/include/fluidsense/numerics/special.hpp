#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fluidsense::numerics {

/// Bessel function of the first kind, order zero.
///
/// |x| < 12 uses the alternating power series sum (-1)^k (x/2)^{2k} / (k!)^2,
/// beyond that the Hankel asymptotic expansion truncated at its smallest term.
/// Absolute error stays below 1e-12 on |x| <= 100.
inline double bessel_j0(double x) {
  if (!std::isfinite(x)) throw std::domain_error("bessel_j0: non-finite argument");
  const double ax = std::fabs(x);

  if (ax < 12.0) {
    const double h = 0.25 * ax * ax;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 200; ++k) {
      term *= -h / (static_cast<double>(k) * k);
      sum += term;
      if (std::fabs(term) < 1e-18 * std::fmax(1.0, std::fabs(sum)) && k > 4) break;
    }
    return sum;
  }

  // P ~ 1 - a2/x^2 + a4/x^4 ..., Q ~ -a1/x + a3/x^3 ...,
  // a_k = prod_{j<=k} (2j-1)^2 / (k! 8^k).
  double p = 1.0;
  double q = 0.0;
  double term = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * ax);
    if (next >= term) break;
    term = next;
    const bool odd = (k % 2) == 1;
    const double sign = ((k / 2) % 2 == 0) ? 1.0 : -1.0;
    if (odd) {
      q -= sign * term;
    } else {
      p += sign * term;
    }
  }
  const double chi = ax - 0.25 * std::numbers::pi;
  return std::sqrt(2.0 / (std::numbers::pi * ax)) * (p * std::cos(chi) - q * std::sin(chi));
}

inline double sigmoid(double u) {
  if (u >= 0.0) {
    const double e = std::exp(-u);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

}  // namespace fluidsense::numerics
