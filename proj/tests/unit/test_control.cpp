#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fluidsense/control.hpp"

namespace {

using namespace fluidsense;
using numerics::RngStream;

RealVector vec(std::initializer_list<double> v) {
  RealVector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

RealVector random_logits(RngStream& rng, int k) {
  RealVector z(k);
  for (int i = 0; i < k; ++i) z[i] = rng.normal();
  return z;
}

TEST(Reflection, EndpointsAndMidpoint) {
  const control::ReflectionConfig cfg;
  const ComplexVector r0 = control::reflection_vector(RealVector::Zero(5), cfg);
  const ComplexVector r1 = control::reflection_vector(RealVector::Ones(5), cfg);
  const ComplexVector rh = control::reflection_vector(RealVector::Constant(5, 0.5), cfg);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(r0[k], cfg.rho_0);
    EXPECT_EQ(r1[k], cfg.rho_1);
    EXPECT_NEAR(std::abs(rh[k] - 0.5 * (cfg.rho_0 + cfg.rho_1)), 0.0, 1e-15);
  }
}

TEST(Reflection, EqualStatesRejected) {
  control::ReflectionConfig cfg;
  cfg.rho_1 = cfg.rho_0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Coupling, SinglePort) {
  control::ReflectionConfig cfg;
  cfg.rho_0 = 0.0;
  cfg.rho_1 = Complex(0.3, 0.8);
  cfg.alpha_b0 = Complex(1.5, -0.5);
  ComplexVector g = ComplexVector::Zero(9);
  g[0] = 1.0;
  RealVector q = RealVector::Zero(9);
  q[0] = 1.0;
  const Complex got = control::effective_coupling(g, q, cfg);
  EXPECT_NEAR(std::abs(got - cfg.alpha_b0 * cfg.rho_1 / 3.0), 0.0, 1e-15);
  EXPECT_EQ(control::effective_coupling(ComplexVector::Zero(9), RealVector::Ones(9), cfg), Complex(0.0, 0.0));
}

TEST(Coupling, MatchesElementwiseSum) {
  RngStream rng(1, 0);
  control::ReflectionConfig cfg;
  cfg.alpha_b0 = Complex(0.7, 0.2);
  cfg.rho_0 = Complex(0.2, 0.1);
  for (int rep = 0; rep < 50; ++rep) {
    const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 8);
    RealVector q(8);
    for (int k = 0; k < 8; ++k) q[k] = rng.uniform();
    Complex oracle{0.0, 0.0};
    for (int k = 0; k < 8; ++k) oracle += std::conj(g[k]) * (cfg.rho_0 + (cfg.rho_1 - cfg.rho_0) * q[k]);
    oracle *= cfg.alpha_b0 / std::sqrt(8.0);
    EXPECT_NEAR(std::abs(control::effective_coupling(g, q, cfg) - oracle), 0.0, 1e-12);
  }
}

TEST(Coupling, LinearInMask) {
  RngStream rng(2, 0);
  const control::ReflectionConfig cfg;
  const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 12);
  RealVector a(12), b(12);
  for (int k = 0; k < 12; ++k) {
    a[k] = rng.uniform();
    b[k] = rng.uniform();
  }
  for (double lam : {0.0, 0.25, 0.9}) {
    const Complex lhs = control::effective_coupling(g, lam * a + (1.0 - lam) * b, cfg);
    const Complex rhs =
        lam * control::effective_coupling(g, a, cfg) + (1.0 - lam) * control::effective_coupling(g, b, cfg);
    EXPECT_NEAR(std::abs(lhs - rhs), 0.0, 1e-12);
  }
}

TEST(HardTopM, Examples) {
  EXPECT_EQ(control::hard_top_m(vec({3, 1, 2}), 2), vec({1, 0, 1}));
  EXPECT_EQ(control::hard_top_m(vec({5, 5, 5, 5}), 2), vec({1, 1, 0, 0}));
  EXPECT_THROW(control::hard_top_m(vec({1, 2}), 0), ConfigError);
  EXPECT_THROW(control::hard_top_m(vec({1, 2}), 3), ConfigError);
}

TEST(HardTopM, SortOracleAndShiftInvariance) {
  RngStream rng(3, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = 2 + static_cast<int>(rng.uniform_index(30));
    const int m = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
    const RealVector z = random_logits(rng, k);
    const RealVector q = control::hard_top_m(z, m);
    EXPECT_EQ(q.sum(), m);
    double min_sel = 1e300, max_unsel = -1e300;
    for (int i = 0; i < k; ++i) {
      if (q[i] == 1.0) min_sel = std::min(min_sel, z[i]); else max_unsel = std::max(max_unsel, z[i]);
    }
    EXPECT_GE(min_sel, max_unsel);
    const double c = 10.0 * rng.normal();
    EXPECT_EQ(control::hard_top_m((z.array() + c).matrix(), m), q);
  }
}

TEST(SoftTopM, Examples) {
  const RealVector q = control::soft_top_m(vec({1, 0}), 1, 0.1);
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_NEAR(q[1], 1.0 / (1.0 + std::exp(10.0)), 1e-18);
  EXPECT_NEAR(q[1], 4.54e-5, 1e-7);
  EXPECT_THROW(control::soft_top_m(vec({1, 0}), 1, 0.0), ConfigError);
}

TEST(SoftTopM, SharpLimitRoundsToHardMask) {
  RngStream rng(4, 0);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 4 + static_cast<int>(rng.uniform_index(20));
    const int m = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
    const RealVector z = random_logits(rng, k);
    const RealVector soft = control::soft_top_m(z, m, 1e-6);
    const RealVector hard = control::hard_top_m(z, m);
    for (int i = 0; i < k; ++i) EXPECT_EQ(soft[i] >= 0.5 ? 1.0 : 0.0, hard[i]);
  }
}

TEST(SoftTopM, SumApproachesBudget) {
  RngStream rng(5, 0);
  const double tau = 1e-3;
  for (int rep = 0; rep < 50; ++rep) {
    const int k = 16;
    const int m = 1 + static_cast<int>(rng.uniform_index(k));
    // Logits on a 0.1 lattice so every gap is >= 0.1.
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = k - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(static_cast<std::uint64_t>(i + 1))]);
    RealVector z(k);
    for (int i = 0; i < k; ++i) z[i] = 0.1 * perm[i];
    const RealVector q = control::soft_top_m(z, m, tau);
    // The M-th entry sits exactly at 0.5; every other term is within sigma(-0.1/tau) of its hard value.
    EXPECT_NEAR(q.sum(), m - 0.5, k * numerics::sigmoid(-0.1 / tau) + 1e-12);
  }
}

TEST(Mode, ParseRoundTrip) {
  EXPECT_EQ(control::parse_mode("stealth"), control::Mode::Stealth);
  EXPECT_EQ(control::parse_mode("cooperative"), control::Mode::Cooperative);
  EXPECT_STREQ(control::mode_name(control::Mode::Stealth), "stealth");
  EXPECT_THROW(control::parse_mode("loud"), ConfigError);
}

control::ContextParams context_params(int k, control::Mode mode) {
  control::ContextParams p;
  p.num_ports = k;
  p.m_active = 20;
  p.m_obs = 30;
  p.aperture_x = 2.0;
  p.aperture_y = 2.0;
  p.sigma_c2 = 1.0;
  p.sigma_n2 = 0.01;
  p.theta_a = 16;
  p.theta_b = 18;
  p.delta = 2;
  p.n_theta = 64;
  p.mode = mode;
  return p;
}

TEST(Context, LengthAndFieldOrder) {
  RngStream rng(6, 0);
  const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 200);
  const auto obs = channel::observe_channel(g, 30, rng);
  const RealVector c = control::encode_context(obs, context_params(200, control::Mode::Cooperative));
  ASSERT_EQ(c.size(), 612);
  EXPECT_EQ(c.head(600), obs.features);
  const double* psi = c.data() + 600;
  EXPECT_DOUBLE_EQ(psi[0], 0.1);
  EXPECT_DOUBLE_EQ(psi[1], 0.15);
  EXPECT_EQ(psi[2], 2.0);
  EXPECT_EQ(psi[4], 1.0);
  EXPECT_EQ(psi[5], 0.01);
  EXPECT_NEAR(psi[6], 0.0, 1e-15);  // cos(pi/2)
  EXPECT_NEAR(psi[7], 1.0, 1e-15);
  EXPECT_NEAR(psi[8], std::cos(2.0 * std::numbers::pi * 18 / 64), 1e-15);
  EXPECT_NEAR(psi[10], 2.0 / 64, 1e-15);
  EXPECT_EQ(psi[11], 1.0);
}

TEST(Context, StealthZeroesTargetFields) {
  RngStream rng(7, 0);
  const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 16);
  const auto obs = channel::observe_channel(g, 8, rng);
  const RealVector c = control::encode_context(obs, context_params(16, control::Mode::Stealth));
  const double* psi = c.data() + 48;
  EXPECT_EQ(psi[6], 0.0);
  EXPECT_EQ(psi[7], 0.0);
  EXPECT_EQ(psi[10], 0.0);
  EXPECT_EQ(psi[11], 0.0);
  EXPECT_NE(psi[9], 0.0);
  EXPECT_THROW(control::encode_context(obs, context_params(17, control::Mode::Stealth)), ConfigError);
}

}  // namespace
