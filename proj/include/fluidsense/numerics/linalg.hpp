#pragma once

#include <cmath>
#include <string>

#include "fluidsense/numerics/log.hpp"
#include "fluidsense/numerics/types.hpp"

namespace fluidsense::numerics {

inline constexpr double kMaxJitter = 1e-6;
inline constexpr double kFirstJitter = 1e-9;

namespace detail {

// Returns the index of the first non-positive pivot, or -1 on success.
inline Eigen::Index try_cholesky(const ComplexMatrix& h, double jitter, ComplexMatrix& l) {
  const Eigen::Index n = h.rows();
  l.setZero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = h(j, j).real() + jitter;
    for (Eigen::Index k = 0; k < j; ++k) diag -= std::norm(l(j, k));
    if (!(diag > 0.0) || !std::isfinite(diag)) return j;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      Complex s = h(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * std::conj(l(j, k));
      l(i, j) = s / ljj;
    }
  }
  return -1;
}

}  // namespace detail

/// Lower-triangular L with L L^H = H + jitter I.
///
/// A non-positive pivot triggers retries with the jitter raised tenfold
/// (starting from 1e-9 when jitter is zero) until it would exceed 1e-6.
inline ComplexMatrix cholesky_psd(const ComplexMatrix& h, double jitter = 0.0) {
  if (h.rows() != h.cols()) throw ConfigError("cholesky_psd: matrix is not square");
  if (jitter < 0.0) throw ConfigError("cholesky_psd: negative jitter");

  ComplexMatrix l;
  double current = jitter;
  Eigen::Index bad = -1;
  while (true) {
    bad = detail::try_cholesky(h, current, l);
    if (bad < 0) {
      if (current > jitter) {
        log::debug("cholesky_psd: applied diagonal jitter " + std::to_string(current));
      }
      return l;
    }
    const double next = current > 0.0 ? current * 10.0 : kFirstJitter;
    if (next > kMaxJitter * (1.0 + 1e-12)) break;
    current = next;
  }
  throw SingularityError("cholesky_psd: non-positive pivot at index " + std::to_string(bad) +
                             " after jitter " + std::to_string(current),
                         static_cast<std::size_t>(bad));
}

/// Solves L L^H y = b given the lower Cholesky factor.
template <typename Rhs>
ComplexMatrix cholesky_solve(const ComplexMatrix& l, const Rhs& b) {
  ComplexMatrix y = l.triangularView<Eigen::Lower>().solve(b);
  l.adjoint().triangularView<Eigen::Upper>().solveInPlace(y);
  return y;
}

inline ComplexVector hermitian_solve(const ComplexMatrix& h, const ComplexVector& b) {
  if (h.rows() != b.size()) throw ConfigError("hermitian_solve: dimension mismatch");
  const ComplexMatrix l = cholesky_psd(h);
  return cholesky_solve(l, b);
}

/// Column-wise solve H Y = B sharing one factorization.
inline ComplexMatrix hermitian_solve(const ComplexMatrix& h, const ComplexMatrix& b) {
  if (h.rows() != b.rows()) throw ConfigError("hermitian_solve: dimension mismatch");
  const ComplexMatrix l = cholesky_psd(h);
  return cholesky_solve(l, b);
}

}  // namespace fluidsense::numerics
