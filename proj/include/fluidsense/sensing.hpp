#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fluidsense/numerics/linalg.hpp"
#include "fluidsense/numerics/random.hpp"
#include "fluidsense/numerics/types.hpp"

namespace fluidsense::sensing {

/// Oversampled Fourier templates s_theta[n] = exp(-j 2 pi n theta / N) / sqrt(d).
inline ComplexMatrix build_dictionary(int feat_dim, int n_theta) {
  if (feat_dim < 2) throw ConfigError("build_dictionary: feature dimension must be >= 2");
  if (n_theta < feat_dim) throw ConfigError("build_dictionary: grid size must be >= feature dimension");
  ComplexMatrix s(feat_dim, n_theta);
  const double norm = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  for (int theta = 0; theta < n_theta; ++theta) {
    for (int n = 0; n < feat_dim; ++n) {
      // Reduce the phase index modulo N before scaling to keep the argument small.
      const auto idx = static_cast<std::int64_t>(n) * theta % n_theta;
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(idx) / n_theta;
      s(n, theta) = std::polar(norm, ang);
    }
  }
  return s;
}

struct DisturbanceCovariance {
  ComplexMatrix clutter;  // R_c, unit diagonal
  ComplexMatrix total;    // R_v = sigma_c^2 R_c + sigma_n^2 I
};

/// Exponential-correlation clutter [R_c]_{mn} = r_c^|m-n|.
inline DisturbanceCovariance build_disturbance_covariance(int feat_dim, double sigma_c2, double sigma_n2,
                                                          double r_c) {
  if (!(r_c >= 0.0 && r_c < 1.0)) throw ConfigError("build_disturbance_covariance: r_c must be in [0, 1)");
  if (sigma_c2 < 0.0 || sigma_n2 < 0.0) throw ConfigError("build_disturbance_covariance: negative power");
  if (!(sigma_c2 + sigma_n2 > 0.0)) throw ConfigError("build_disturbance_covariance: total power must be > 0");
  DisturbanceCovariance cov;
  cov.clutter.resize(feat_dim, feat_dim);
  for (int m = 0; m < feat_dim; ++m) {
    for (int n = 0; n < feat_dim; ++n) cov.clutter(m, n) = std::pow(r_c, std::abs(m - n));
  }
  cov.total = sigma_c2 * cov.clutter + sigma_n2 * ComplexMatrix::Identity(feat_dim, feat_dim);
  return cov;
}

struct SceneParams {
  int n_theta = 64;
  int feat_dim = 32;
  double r_c = 0.5;
  double sigma_c2 = 1.0;
  double sigma_n2 = 0.01;
  double alpha_a_mag = 3.0;
};

/// Template dictionary plus disturbance statistics with whitened templates
/// cached. Immutable after build(); shared read-only across workers.
class SensingScene {
 public:
  static SensingScene build(const SceneParams& params) {
    SensingScene scene;
    scene.params_ = params;
    scene.templates_ = build_dictionary(params.feat_dim, params.n_theta);
    const DisturbanceCovariance cov =
        build_disturbance_covariance(params.feat_dim, params.sigma_c2, params.sigma_n2, params.r_c);
    scene.clutter_cov_ = cov.clutter;
    scene.disturbance_cov_ = cov.total;
    if (params.sigma_c2 > 0.0) scene.clutter_chol_ = numerics::cholesky_psd(cov.clutter);
    scene.whitened_ = numerics::hermitian_solve(cov.total, scene.templates_);
    scene.template_energy_.resize(params.n_theta);
    for (int t = 0; t < params.n_theta; ++t) {
      scene.template_energy_[t] = scene.templates_.col(t).dot(scene.whitened_.col(t)).real();
    }
    return scene;
  }

  const SceneParams& params() const noexcept { return params_; }
  int n_theta() const noexcept { return params_.n_theta; }
  int feat_dim() const noexcept { return params_.feat_dim; }
  const ComplexMatrix& templates() const noexcept { return templates_; }
  const ComplexMatrix& clutter_covariance() const noexcept { return clutter_cov_; }
  const ComplexMatrix& disturbance_covariance() const noexcept { return disturbance_cov_; }
  /// Columns R_v^{-1} s_theta.
  const ComplexMatrix& whitened_templates() const noexcept { return whitened_; }
  /// s_theta^H R_v^{-1} s_theta per bin.
  double template_energy(int theta) const { return template_energy_[theta]; }

  /// s_a^H R_v^{-1} s_b.
  Complex whitened_inner(int theta_a, int theta_b) const {
    return templates_.col(theta_a).dot(whitened_.col(theta_b));
  }

  /// v ~ CN(0, R_v) drawn as sqrt(sigma_c^2) L_c w_c + sqrt(sigma_n^2) w_n.
  ComplexVector sample_disturbance(numerics::RngStream& rng) const {
    const int d = params_.feat_dim;
    ComplexVector v = ComplexVector::Zero(d);
    if (params_.sigma_c2 > 0.0) {
      const ComplexVector wc = numerics::sample_standard_complex_gaussian(rng, d);
      v = clutter_chol_.triangularView<Eigen::Lower>() * wc;
      v *= std::sqrt(params_.sigma_c2);
    }
    if (params_.sigma_n2 > 0.0) {
      v += std::sqrt(params_.sigma_n2) * numerics::sample_standard_complex_gaussian(rng, d);
    }
    return v;
  }

 private:
  SceneParams params_;
  ComplexMatrix templates_;
  ComplexMatrix clutter_cov_;
  ComplexMatrix disturbance_cov_;
  ComplexMatrix clutter_chol_;
  ComplexMatrix whitened_;
  RealVector template_energy_;
};

inline int circular_distance(int a, int b, int n_theta) {
  const int diff = std::abs(a - b) % n_theta;
  return std::min(diff, n_theta - diff);
}

inline int wrap_bin(int theta, int n_theta) {
  const int r = theta % n_theta;
  return r < 0 ? r + n_theta : r;
}

enum class Hypothesis {
  H0,         // disturbance only
  H1,         // target A, interferer B, disturbance
  UserBOnly,  // stealth detection: interferer B and disturbance
};

struct Truth {
  int theta_a = 0;
  int theta_b = 0;
  Complex alpha_a{0.0, 0.0};
  Complex alpha_b{0.0, 0.0};
};

struct Snapshot {
  ComplexVector x;
  Hypothesis hypothesis = Hypothesis::H0;
  Truth truth;
};

/// One receiver snapshot. H1 draws the target phase uniformly; the
/// disturbance is drawn after the phase.
inline Snapshot synthesize_snapshot(const SensingScene& scene, int theta_a, int theta_b, Complex alpha_b,
                                    Hypothesis hypothesis, numerics::RngStream& rng) {
  Snapshot snap;
  snap.hypothesis = hypothesis;
  snap.truth.theta_a = theta_a;
  snap.truth.theta_b = theta_b;
  snap.x = ComplexVector::Zero(scene.feat_dim());
  if (hypothesis == Hypothesis::H1) {
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    snap.truth.alpha_a = std::polar(scene.params().alpha_a_mag, phi);
    snap.x += snap.truth.alpha_a * scene.templates().col(theta_a);
  }
  if (hypothesis != Hypothesis::H0) {
    snap.truth.alpha_b = alpha_b;
    snap.x += alpha_b * scene.templates().col(theta_b);
  }
  snap.x += scene.sample_disturbance(rng);
  return snap;
}

struct DetectionResult {
  RealVector statistics;  // T(theta; x) per bin
  double t_max = 0.0;
  int theta_hat = 0;

  bool detected(double tau) const { return t_max > tau; }
};

/// Whitened matched-filter bank T(theta) = |s^H R_v^-1 x|^2 / (s^H R_v^-1 s);
/// argmax ties resolve to the smallest bin.
inline DetectionResult matched_filter_statistics(const SensingScene& scene, const ComplexVector& x) {
  if (x.size() != scene.feat_dim()) throw ConfigError("matched_filter_statistics: dimension mismatch");
  DetectionResult res;
  const ComplexVector proj = scene.whitened_templates().adjoint() * x;
  res.statistics.resize(scene.n_theta());
  res.t_max = -1.0;
  for (int t = 0; t < scene.n_theta(); ++t) {
    const double stat = std::norm(proj[t]) / scene.template_energy(t);
    res.statistics[t] = stat;
    if (stat > res.t_max) {
      res.t_max = stat;
      res.theta_hat = t;
    }
  }
  return res;
}

/// Type-7 quantile (linear interpolation between order statistics).
inline double empirical_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw ConfigError("empirical_quantile: no values");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Optional User B return injected into calibration draws: (draw rng) -> (alpha_B, theta_B).
using InterfererSampler = std::function<std::pair<Complex, int>(numerics::RngStream&)>;

/// T_max over n_draws H0 snapshots; draw i uses rng.derive(i).
inline std::vector<double> null_statistics(const SensingScene& scene, std::size_t n_draws,
                                           const numerics::RngStream& rng,
                                           const InterfererSampler& interferer = {}) {
  std::vector<double> tmax(n_draws);
  for (std::size_t i = 0; i < n_draws; ++i) {
    numerics::RngStream draw = rng.derive(i);
    ComplexVector x = scene.sample_disturbance(draw);
    if (interferer) {
      const auto [alpha_b, theta_b] = interferer(draw);
      x += alpha_b * scene.templates().col(theta_b);
    }
    tmax[i] = matched_filter_statistics(scene, x).t_max;
  }
  return tmax;
}

inline std::size_t min_calibration_draws(double p_fa) {
  return static_cast<std::size_t>(std::ceil(50.0 / p_fa - 1e-9));
}

/// CFAR threshold: empirical (1 - P_FA) quantile of T_max under H0.
inline double calibrate_threshold(const SensingScene& scene, double p_fa, std::size_t n_draws,
                                  const numerics::RngStream& rng, const InterfererSampler& interferer = {}) {
  if (!(p_fa > 0.0 && p_fa < 1.0)) throw ConfigError("calibrate_threshold: P_FA must be in (0, 1)");
  if (n_draws < min_calibration_draws(p_fa)) {
    throw ConfigError("calibrate_threshold: " + std::to_string(n_draws) + " draws < 50/P_FA = " +
                      std::to_string(min_calibration_draws(p_fa)));
  }
  return empirical_quantile(null_statistics(scene, n_draws, rng, interferer), 1.0 - p_fa);
}

struct TrialOutcome {
  double t_max = 0.0;
  int theta_hat = 0;
  int theta_true = 0;
};

struct MetricsRecord {
  std::size_t trials = 0;
  std::size_t detected = 0;
  std::size_t detected_and_correct = 0;
  double sum_sq_error = 0.0;  // over detected trials, circular bins

  double p_d() const { return static_cast<double>(detected) / static_cast<double>(trials); }
  double p_det_and_correct() const {
    return static_cast<double>(detected_and_correct) / static_cast<double>(trials);
  }
  /// Undefined (nullopt) when nothing was detected.
  std::optional<double> p_correct_given_det() const {
    if (detected == 0) return std::nullopt;
    return static_cast<double>(detected_and_correct) / static_cast<double>(detected);
  }
  std::optional<double> rmse_det() const {
    if (detected == 0) return std::nullopt;
    return std::sqrt(sum_sq_error / static_cast<double>(detected));
  }
};

inline MetricsRecord aggregate_metrics(std::span<const TrialOutcome> outcomes, double tau, int n_theta) {
  if (outcomes.empty()) throw ConfigError("aggregate_metrics: no trials");
  MetricsRecord rec;
  rec.trials = outcomes.size();
  for (const TrialOutcome& o : outcomes) {
    if (!(o.t_max > tau)) continue;
    ++rec.detected;
    const int err = circular_distance(o.theta_hat, o.theta_true, n_theta);
    if (err == 0) ++rec.detected_and_correct;
    rec.sum_sq_error += static_cast<double>(err) * err;
  }
  return rec;
}

}  // namespace fluidsense::sensing
