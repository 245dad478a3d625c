#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "fluidsense/channel.hpp"
#include "fluidsense/numerics/special.hpp"
#include "fluidsense/numerics/types.hpp"

// Mask and logit machinery for the FAS node: reflection-state coding,
// effective coupling, top-M projections and policy context assembly.
namespace fluidsense::control {

struct ReflectionConfig {
  Complex rho_0{0.2, 0.0};
  Complex rho_1{1.0, 0.0};
  Complex alpha_b0{1.0, 0.0};

  void validate() const {
    if (rho_0 == rho_1) throw ConfigError("ReflectionConfig: rho_0 and rho_1 must differ");
  }
};

/// rho = rho_0 1 + (rho_1 - rho_0) q; q may be a soft mask in [0, 1]^K.
inline ComplexVector reflection_vector(const RealVector& q, const ReflectionConfig& cfg) {
  ComplexVector rho(q.size());
  for (Eigen::Index k = 0; k < q.size(); ++k) rho[k] = cfg.rho_0 + (cfg.rho_1 - cfg.rho_0) * q[k];
  return rho;
}

/// alpha_B = (alpha_B0 / sqrt K) g^H rho(q).
inline Complex effective_coupling(const ComplexVector& g, const RealVector& q, const ReflectionConfig& cfg) {
  if (g.size() != q.size()) throw ConfigError("effective_coupling: length mismatch");
  const ComplexVector rho = reflection_vector(q, cfg);
  return cfg.alpha_b0 / std::sqrt(static_cast<double>(g.size())) * g.dot(rho);
}

/// Indices of the M largest logits, ordered by decreasing logit; ties favour the smaller index.
inline std::vector<int> top_m_indices(const RealVector& z, int m) {
  std::vector<int> idx(static_cast<std::size_t>(z.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + m, idx.end(), [&](int a, int b) {
    return z[a] > z[b] || (z[a] == z[b] && a < b);
  });
  idx.resize(static_cast<std::size_t>(m));
  return idx;
}

inline RealVector hard_top_m(const RealVector& z, int m_active) {
  if (m_active < 1 || m_active > z.size()) {
    throw ConfigError("hard_top_m: M_active=" + std::to_string(m_active) + " outside [1, " +
                      std::to_string(z.size()) + "]");
  }
  RealVector q = RealVector::Zero(z.size());
  for (int k : top_m_indices(z, m_active)) q[k] = 1.0;
  return q;
}

/// M-th largest entry of z (M is 1-based).
inline double order_statistic(const RealVector& z, int m) {
  std::vector<double> v(z.data(), z.data() + z.size());
  std::nth_element(v.begin(), v.begin() + (m - 1), v.end(), std::greater<>());
  return v[static_cast<std::size_t>(m - 1)];
}

/// q~_k = sigmoid((z_k - z_(M)) / tau_q).
inline RealVector soft_top_m(const RealVector& z, int m_active, double tau_q) {
  if (!(tau_q > 0.0)) throw ConfigError("soft_top_m: tau_q must be positive");
  if (m_active < 1 || m_active > z.size()) throw ConfigError("soft_top_m: M_active out of range");
  const double thresh = order_statistic(z, m_active);
  RealVector q(z.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) q[k] = numerics::sigmoid((z[k] - thresh) / tau_q);
  return q;
}

enum class Mode { Stealth, Cooperative };

inline Mode parse_mode(const std::string& s) {
  if (s == "stealth") return Mode::Stealth;
  if (s == "cooperative") return Mode::Cooperative;
  throw ConfigError("unknown mode '" + s + "' (expected stealth or cooperative)");
}

inline const char* mode_name(Mode m) { return m == Mode::Stealth ? "stealth" : "cooperative"; }

/// Side information psi that accompanies o_B in the policy context.
struct ContextParams {
  int num_ports = 0;
  int m_active = 0;
  int m_obs = 0;
  double aperture_x = 0.0;
  double aperture_y = 0.0;
  double sigma_c2 = 0.0;
  double sigma_n2 = 0.0;
  int theta_a = 0;
  int theta_b = 0;
  int delta = 0;
  int n_theta = 1;
  Mode mode = Mode::Cooperative;
};

inline constexpr int kSideInfoLength = 12;

inline int context_length(int num_ports) { return 3 * num_ports + kSideInfoLength; }

/// c = [o_B; psi] with psi = [M/K, M_obs/K, W_x, W_y, sigma_c^2, sigma_n^2,
/// cos/sin(2 pi theta_A / N), cos/sin(2 pi theta_B / N), Delta / N, mode].
/// Stealth mode zeroes the theta_A and Delta entries.
inline RealVector encode_context(const channel::Observation& obs, const ContextParams& p) {
  const auto k = static_cast<int>(obs.mask.size());
  if (k != p.num_ports) throw ConfigError("encode_context: observation length does not match K");
  if (p.n_theta < 1) throw ConfigError("encode_context: N_theta must be positive");
  RealVector c(context_length(k));
  c.head(3 * k) = obs.features;
  const double two_pi = 2.0 * std::numbers::pi;
  const bool stealth = p.mode == Mode::Stealth;
  const double ang_a = two_pi * p.theta_a / p.n_theta;
  const double ang_b = two_pi * p.theta_b / p.n_theta;
  double* psi = c.data() + 3 * k;
  psi[0] = static_cast<double>(p.m_active) / k;
  psi[1] = static_cast<double>(p.m_obs) / k;
  psi[2] = p.aperture_x;
  psi[3] = p.aperture_y;
  psi[4] = p.sigma_c2;
  psi[5] = p.sigma_n2;
  psi[6] = stealth ? 0.0 : std::cos(ang_a);
  psi[7] = stealth ? 0.0 : std::sin(ang_a);
  psi[8] = std::cos(ang_b);
  psi[9] = std::sin(ang_b);
  psi[10] = stealth ? 0.0 : static_cast<double>(p.delta) / p.n_theta;
  psi[11] = stealth ? 0.0 : 1.0;
  return c;
}

}  // namespace fluidsense::control
