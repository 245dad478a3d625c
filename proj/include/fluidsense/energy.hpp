#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fluidsense/control.hpp"
#include "fluidsense/numerics/diff_graph.hpp"
#include "fluidsense/numerics/types.hpp"
#include "fluidsense/sensing.hpp"

// Guidance energy over (soft) port masks and its gradient with respect to logits.
namespace fluidsense::energy {

struct EnergyWeights {
  double lambda_int = 1.0;
  double lambda_hide = 0.0;
  double lambda_card = 1.0;
  double lambda_bin = 0.1;

  static EnergyWeights cooperative() { return {1.0, 0.0, 1.0, 0.1}; }
  static EnergyWeights stealth() { return {0.0, 1.0, 1.0, 0.1}; }
  static EnergyWeights for_mode(control::Mode mode) {
    return mode == control::Mode::Stealth ? stealth() : cooperative();
  }

  void validate() const {
    if (lambda_int < 0.0 || lambda_hide < 0.0 || lambda_card < 0.0 || lambda_bin < 0.0) {
      throw ConfigError("EnergyWeights: weights must be non-negative");
    }
    if (!(lambda_int > 0.0 || lambda_hide > 0.0)) {
      throw ConfigError("EnergyWeights: lambda_int or lambda_hide must be positive");
    }
  }
};

struct EnergyBreakdown {
  double e_int = 0.0;
  double e_hide = 0.0;
  double e_card = 0.0;
  double e_bin = 0.0;
  double e_total = 0.0;
  std::optional<RealVector> gradient;  // d E_total / d z
};

/// Circular guard set {(theta_A + delta) mod N : delta in [-G, G]}, sorted, no duplicates.
struct GuardSet {
  int theta_a = 0;
  int guard = 0;
  int n_theta = 1;
  std::vector<int> bins;
};

inline GuardSet make_guard_set(int theta_a, int guard, int n_theta) {
  if (guard < 0) throw ConfigError("make_guard_set: G must be >= 0");
  if (theta_a < 0 || theta_a >= n_theta) throw ConfigError("make_guard_set: theta_A outside grid");
  GuardSet gs{theta_a, guard, n_theta, {}};
  std::vector<char> seen(static_cast<std::size_t>(n_theta), 0);
  for (int delta = -guard; delta <= guard; ++delta) {
    seen[static_cast<std::size_t>(sensing::wrap_bin(theta_a + delta, n_theta))] = 1;
  }
  for (int t = 0; t < n_theta; ++t) {
    if (seen[static_cast<std::size_t>(t)]) gs.bins.push_back(t);
  }
  return gs;
}

/// gamma(theta, theta_B) = |s_theta^H R_v^-1 s_B|^2 / (s_theta^H R_v^-1 s_theta).
inline double overlap_kernel(const sensing::SensingScene& scene, int theta, int theta_b) {
  return std::norm(scene.whitened_inner(theta, theta_b)) / scene.template_energy(theta);
}

enum class CsiMode { Observed, Oracle };

inline CsiMode parse_csi_mode(const std::string& s) {
  if (s == "observed") return CsiMode::Observed;
  if (s == "oracle") return CsiMode::Oracle;
  throw ConfigError("unknown csi_mode '" + s + "' (expected observed or oracle)");
}

inline const char* csi_mode_name(CsiMode m) { return m == CsiMode::Observed ? "observed" : "oracle"; }

/// Everything the energy needs, reduced to per-port coefficients:
/// alpha_B(q) = baseline + sum_k coupling[k] q_k. Reads only S, R_v and the
/// channel vector fed in, never a disturbance sample.
class EnergyProblem {
 public:
  EnergyProblem(const ComplexVector& g_source, const sensing::SensingScene& scene, const GuardSet& guard,
                int theta_b, const EnergyWeights& weights, int m_active, const control::ReflectionConfig& cfg)
      : g_source_(g_source), cfg_(cfg), weights_(weights), m_active_(m_active) {
    weights.validate();
    cfg.validate();
    const auto k = static_cast<int>(g_source.size());
    if (m_active < 1 || m_active > k) throw ConfigError("EnergyProblem: M_active out of range");
    if (theta_b < 0 || theta_b >= scene.n_theta()) throw ConfigError("EnergyProblem: theta_B outside grid");
    const Complex scale = cfg.alpha_b0 / std::sqrt(static_cast<double>(k));
    coupling_re_.resize(static_cast<std::size_t>(k));
    coupling_im_.resize(static_cast<std::size_t>(k));
    Complex total{0.0, 0.0};
    for (int i = 0; i < k; ++i) {
      const Complex gc = std::conj(g_source[i]);
      total += gc;
      const Complex c = scale * gc * (cfg.rho_1 - cfg.rho_0);
      coupling_re_[static_cast<std::size_t>(i)] = c.real();
      coupling_im_[static_cast<std::size_t>(i)] = c.imag();
    }
    baseline_ = scale * cfg.rho_0 * total;
    guard_overlap_ = 0.0;
    for (int t : guard.bins) guard_overlap_ += overlap_kernel(scene, t, theta_b);
    hide_gain_ = scene.template_energy(theta_b);
  }

  int num_ports() const noexcept { return static_cast<int>(g_source_.size()); }
  int m_active() const noexcept { return m_active_; }
  const EnergyWeights& weights() const noexcept { return weights_; }
  const ComplexVector& channel() const noexcept { return g_source_; }
  const control::ReflectionConfig& reflection() const noexcept { return cfg_; }
  double guard_overlap() const noexcept { return guard_overlap_; }
  double hide_gain() const noexcept { return hide_gain_; }

  /// Energy of a soft or hard mask.
  EnergyBreakdown evaluate(const RealVector& q) const {
    if (q.size() != g_source_.size()) throw ConfigError("guidance_energy: mask length mismatch");
    const double mag2 = std::norm(control::effective_coupling(g_source_, q, cfg_));
    EnergyBreakdown e;
    e.e_int = mag2 * guard_overlap_;
    e.e_hide = mag2 * hide_gain_;
    const double excess = q.sum() - m_active_;
    e.e_card = excess * excess;
    double bin = 0.0;
    for (Eigen::Index k = 0; k < q.size(); ++k) bin += q[k] * (1.0 - q[k]);
    e.e_bin = bin / static_cast<double>(q.size());
    e.e_total = weights_.lambda_int * e.e_int + weights_.lambda_hide * e.e_hide +
                weights_.lambda_card * e.e_card + weights_.lambda_bin * e.e_bin;
    return e;
  }

  /// Total energy of the binary mask selecting `ports` (fast path for search).
  double hard_energy(std::span<const int> ports) const {
    Complex alpha = baseline_;
    for (int k : ports) {
      alpha += Complex(coupling_re_[static_cast<std::size_t>(k)], coupling_im_[static_cast<std::size_t>(k)]);
    }
    const double mag2 = std::norm(alpha);
    const double excess = static_cast<double>(ports.size()) - m_active_;
    return weights_.lambda_int * mag2 * guard_overlap_ + weights_.lambda_hide * mag2 * hide_gain_ +
           weights_.lambda_card * excess * excess;
  }

  /// Builds E_total(soft_top_m(z)) on a DiffGraph, the M-th largest logit
  /// entering as a gradient-stopped node. Returns the breakdown with gradient.
  EnergyBreakdown gradient_wrt_logits(const RealVector& z, double tau_q) const {
    using numerics::Var;
    if (!(tau_q > 0.0)) throw ConfigError("energy_gradient_wrt_logits: tau_q must be positive");
    if (z.size() != g_source_.size()) throw ConfigError("energy_gradient_wrt_logits: logit length mismatch");
    const auto k = static_cast<std::size_t>(z.size());
    numerics::DiffGraph g;
    g.reserve(8 * k + 32);
    const std::vector<Var> logits = g.inputs(std::span<const double>(z.data(), k));
    const Var thresh = g.order_statistic(logits, static_cast<std::size_t>(m_active_));
    const double inv_tau = 1.0 / tau_q;
    std::vector<Var> q;
    q.reserve(k);
    for (Var zk : logits) q.push_back(g.sigmoid((zk - thresh) * inv_tau));

    const Var re = g.dot(q, coupling_re_) + baseline_.real();
    const Var im = g.dot(q, coupling_im_) + baseline_.imag();
    const Var mag2 = g.square(re) + g.square(im);
    const Var e_int = mag2 * guard_overlap_;
    const Var e_hide = mag2 * hide_gain_;
    const Var sum_q = g.sum(q);
    const Var e_card = g.square(sum_q - static_cast<double>(m_active_));
    const Var e_bin = (sum_q - g.dot(q, q)) * (1.0 / static_cast<double>(k));
    const Var total = e_int * weights_.lambda_int + e_hide * weights_.lambda_hide +
                      e_card * weights_.lambda_card + e_bin * weights_.lambda_bin;

    EnergyBreakdown out;
    out.e_int = e_int.value();
    out.e_hide = e_hide.value();
    out.e_card = e_card.value();
    out.e_bin = e_bin.value();
    out.e_total = total.value();
    const std::vector<double> grad = g.gradient(total);
    out.gradient = RealVector(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) (*out.gradient)[static_cast<Eigen::Index>(i)] = grad[i];
    return out;
  }

 private:
  ComplexVector g_source_;
  control::ReflectionConfig cfg_;
  EnergyWeights weights_;
  int m_active_;
  std::vector<double> coupling_re_;
  std::vector<double> coupling_im_;
  Complex baseline_;
  double guard_overlap_ = 0.0;
  double hide_gain_ = 0.0;
};

inline EnergyBreakdown guidance_energy(const RealVector& q_tilde, const ComplexVector& g_source,
                                       const sensing::SensingScene& scene, const GuardSet& guard, int theta_b,
                                       const EnergyWeights& weights, int m_active,
                                       const control::ReflectionConfig& cfg) {
  return EnergyProblem(g_source, scene, guard, theta_b, weights, m_active, cfg).evaluate(q_tilde);
}

inline RealVector energy_gradient_wrt_logits(const RealVector& z, const EnergyProblem& problem, double tau_q) {
  return *problem.gradient_wrt_logits(z, tau_q).gradient;
}

}  // namespace fluidsense::energy
