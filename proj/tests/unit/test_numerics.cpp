#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "fluidsense/numerics/diff_graph.hpp"
#include "fluidsense/numerics/linalg.hpp"
#include "fluidsense/numerics/random.hpp"
#include "fluidsense/numerics/special.hpp"

namespace {

using namespace fluidsense;
using numerics::RngStream;

// Independent oracle: 60-term power series in long double.
long double j0_series_oracle(long double x) {
  long double term = 1.0L;
  long double sum = 1.0L;
  const long double h = x * x / 4.0L;
  for (int k = 1; k < 60; ++k) {
    term *= -h / (static_cast<long double>(k) * k);
    sum += term;
  }
  return sum;
}

// First zero of J0 by bisection on the oracle.
long double j0_first_zero_oracle() {
  long double lo = 2.0L;
  long double hi = 3.0L;
  for (int i = 0; i < 200; ++i) {
    const long double mid = 0.5L * (lo + hi);
    if (j0_series_oracle(mid) > 0.0L) lo = mid; else hi = mid;
  }
  return 0.5L * (lo + hi);
}

double control_threshold(const RealVector& x, int m) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end(), std::greater<>());
  return v[static_cast<std::size_t>(m - 1)];
}

ComplexMatrix random_hermitian_psd(RngStream& rng, int n, int rank) {
  ComplexMatrix a(n, rank);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < rank; ++j) a(i, j) = Complex(rng.normal(), rng.normal());
  return a * a.adjoint();
}

TEST(BesselJ0, Origin) { EXPECT_EQ(numerics::bessel_j0(0.0), 1.0); }

TEST(BesselJ0, FirstZeroAndPi) {
  const auto zero = static_cast<double>(j0_first_zero_oracle());
  EXPECT_NEAR(zero, 2.404826, 1e-6);
  EXPECT_NEAR(numerics::bessel_j0(2.404826), 0.0, 1e-5);
  EXPECT_NEAR(numerics::bessel_j0(zero), 0.0, 1e-12);
  const auto at_pi = static_cast<double>(j0_series_oracle(std::numbers::pi_v<long double>));
  EXPECT_NEAR(at_pi, -0.304242, 1e-5);
  EXPECT_NEAR(numerics::bessel_j0(std::numbers::pi), at_pi, 1e-12);
}

TEST(BesselJ0, MatchesOracleBelowSeriesLimit) {
  // The long double oracle is trustworthy where cancellation is mild.
  for (double x = 0.0; x <= 11.0; x += 0.37) {
    EXPECT_NEAR(numerics::bessel_j0(x), static_cast<double>(j0_series_oracle(x)), 1e-10) << x;
  }
}

TEST(BesselJ0, ReferenceValuesAcrossBranches) {
  // Values from mpmath at 30 digits.
  EXPECT_NEAR(numerics::bessel_j0(8.0), 0.171650807137553906090869, 1e-10);
  EXPECT_NEAR(numerics::bessel_j0(12.0), 0.0476893107968335366, 1e-10);
  EXPECT_NEAR(numerics::bessel_j0(12.5), 0.146884054700421102, 1e-10);
  EXPECT_NEAR(numerics::bessel_j0(20.0), 0.167024664340583, 1e-10);
  EXPECT_NEAR(numerics::bessel_j0(100.0), 0.0199858503042231, 1e-10);
}

TEST(BesselJ0, EvenFunction) {
  RngStream rng(7, 0);
  for (int i = 0; i < 1000; ++i) {
    const double x = 200.0 * rng.uniform() - 100.0;
    EXPECT_EQ(numerics::bessel_j0(x), numerics::bessel_j0(-x));
  }
}

TEST(BesselJ0, RejectsNonFinite) {
  EXPECT_THROW(numerics::bessel_j0(std::nan("")), std::domain_error);
  EXPECT_THROW(numerics::bessel_j0(INFINITY), std::domain_error);
}

TEST(CholeskyPsd, IdentityAndDiagonal) {
  const ComplexMatrix eye = ComplexMatrix::Identity(5, 5);
  EXPECT_TRUE(numerics::cholesky_psd(eye).isApprox(eye, 1e-15));
  ComplexMatrix two = 2.0 * ComplexMatrix::Identity(2, 2);
  const ComplexMatrix l = numerics::cholesky_psd(two);
  EXPECT_NEAR(l(0, 0).real(), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(l(1, 1).real(), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(l(1, 0), Complex(0.0, 0.0));
}

TEST(CholeskyPsd, RandomReconstructionAndStructure) {
  RngStream rng(11, 3);
  for (int rep = 0; rep < 20; ++rep) {
    const ComplexMatrix h = random_hermitian_psd(rng, 8, 8);
    const ComplexMatrix l = numerics::cholesky_psd(h);
    EXPECT_LE((l * l.adjoint() - h).norm() / h.norm(), 1e-10);
    for (int i = 0; i < 8; ++i) {
      EXPECT_GT(l(i, i).real(), 0.0);
      EXPECT_EQ(l(i, i).imag(), 0.0);
      for (int j = i + 1; j < 8; ++j) EXPECT_EQ(l(i, j), Complex(0.0, 0.0));
    }
  }
}

TEST(CholeskyPsd, JitterLadderHandlesRankDeficiency) {
  const ComplexMatrix ones = ComplexMatrix::Ones(6, 6);
  const ComplexMatrix l = numerics::cholesky_psd(ones);
  EXPECT_LE((l * l.adjoint() - ones).norm(), 1e-5);
}

TEST(CholeskyPsd, IndefiniteMatrixNamesPivot) {
  ComplexMatrix h = ComplexMatrix::Identity(3, 3);
  h(2, 2) = -1.0;
  try {
    numerics::cholesky_psd(h);
    FAIL() << "expected SingularityError";
  } catch (const SingularityError& e) {
    EXPECT_EQ(e.pivot(), 2u);
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos);
  }
}

TEST(HermitianSolve, TrivialCases) {
  RngStream rng(5, 0);
  const ComplexVector b = numerics::sample_standard_complex_gaussian(rng, 4);
  EXPECT_TRUE(numerics::hermitian_solve(ComplexMatrix::Identity(4, 4), b).isApprox(b, 1e-15));
  EXPECT_TRUE(numerics::hermitian_solve(2.0 * ComplexMatrix::Identity(4, 4), b).isApprox(b / 2.0, 1e-15));
}

TEST(HermitianSolve, RandomResidual) {
  RngStream rng(17, 1);
  for (int rep = 0; rep < 10; ++rep) {
    const ComplexMatrix h = random_hermitian_psd(rng, 16, 20) + 0.1 * ComplexMatrix::Identity(16, 16);
    const ComplexVector b = numerics::sample_standard_complex_gaussian(rng, 16);
    const ComplexVector y = numerics::hermitian_solve(h, b);
    EXPECT_LE((h * y - b).norm() / b.norm(), 1e-9);
  }
}

TEST(Random, ComplexGaussianMoments) {
  RngStream rng(2024, 0);
  const int n = 1'000'000;
  const ComplexVector v = numerics::sample_standard_complex_gaussian(rng, n);
  double mag2 = 0.0;
  double re_mean = 0.0;
  for (int i = 0; i < n; ++i) {
    mag2 += std::norm(v[i]);
    re_mean += v[i].real();
  }
  re_mean /= n;
  double re_var = 0.0;
  for (int i = 0; i < n; ++i) re_var += (v[i].real() - re_mean) * (v[i].real() - re_mean);
  EXPECT_NEAR(mag2 / n, 1.0, 0.01);
  EXPECT_NEAR(re_var / n, 0.5, 0.01);
}

TEST(Random, SameStreamSameDraws) {
  RngStream a(99, 4);
  RngStream b(99, 4);
  EXPECT_EQ(numerics::sample_standard_complex_gaussian(a, 32), numerics::sample_standard_complex_gaussian(b, 32));
  RngStream c(99, 5);
  RngStream d(99, 4);
  EXPECT_NE(numerics::sample_standard_complex_gaussian(c, 8), numerics::sample_standard_complex_gaussian(d, 8));
  EXPECT_EQ(RngStream(1, 2).derive(3).next_u64(), RngStream(1, 2).derive(3).next_u64());
}

TEST(Random, UniformIndexInRange) {
  RngStream rng(3, 3);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(FiniteDifference, QuadraticAndConstant) {
  RealVector x(2);
  x << 1.0, 2.0;
  const RealVector g = numerics::finite_difference_gradient([](const RealVector& v) { return v.dot(v); }, x, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-6);
  EXPECT_NEAR(g[1], 4.0, 1e-6);
  const RealVector zero = numerics::finite_difference_gradient([](const RealVector&) { return 3.5; }, x, 1e-5);
  EXPECT_EQ(zero.norm(), 0.0);
  EXPECT_THROW(numerics::finite_difference_gradient([](const RealVector&) { return 0.0; }, x, 0.0), ConfigError);
}

// Property: reverse pass equals central differences on random compositions of
// every primitive used by the energy graph.
TEST(DiffGraph, RandomCompositionsMatchFiniteDifferences) {
  RngStream rng(31, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + static_cast<int>(rng.uniform_index(6));
    RealVector x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.normal();
    std::vector<double> w(static_cast<std::size_t>(n));
    for (double& wi : w) wi = rng.normal();
    const int m = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));

    auto build = [&](numerics::DiffGraph& g, const RealVector& at, bool stop_at_base) {
      const std::vector<numerics::Var> in = g.inputs(std::span<const double>(at.data(), at.size()));
      numerics::Var thr = g.order_statistic(in, static_cast<std::size_t>(m));
      if (stop_at_base) thr = g.constant(control_threshold(x, m));
      std::vector<numerics::Var> act;
      for (numerics::Var v : in) act.push_back(g.sigmoid((v - thr) * 3.0));
      const numerics::Var a = g.dot(act, w);
      const numerics::Var b = g.dot(act, act);
      const numerics::Var c = g.silu(in[0]) * g.exp(in[1] * 0.3);
      const numerics::Var d = g.sin(in[0]) + g.cos(in[1]) * g.reciprocal(g.square(in[1]) + 1.0);
      const numerics::Var s = g.sum(in);
      return g.square(a) + b * c + d - s * 0.5 + g.silu(a - b);
    };

    numerics::DiffGraph g;
    const numerics::Var out = build(g, x, false);
    const std::vector<double> grad = g.gradient(out);
    ASSERT_EQ(grad.size(), static_cast<std::size_t>(n));

    // Oracle freezes the order statistic at the base point, mirroring the gradient stop.
    auto f = [&](const RealVector& at) {
      numerics::DiffGraph h;
      return build(h, at, true).value();
    };
    const RealVector fd = numerics::finite_difference_gradient(f, x, 1e-5);
    double scale = fd.cwiseAbs().maxCoeff();
    for (int i = 0; i < n; ++i) EXPECT_LE(std::abs(grad[static_cast<std::size_t>(i)] - fd[i]), 1e-4 * std::max(scale, 1e-3));
  }
}

TEST(DiffGraph, StoppedNodeHasNoGradient) {
  numerics::DiffGraph g;
  const numerics::Var x = g.input(2.0);
  const numerics::Var y = g.input(3.0);
  const numerics::Var out = g.stop_gradient(x * y) + y;
  const std::vector<double> grad = g.gradient(out);
  EXPECT_EQ(grad[0], 0.0);
  EXPECT_EQ(grad[1], 1.0);
}

}  // namespace
