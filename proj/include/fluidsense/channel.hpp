#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "fluidsense/numerics/linalg.hpp"
#include "fluidsense/numerics/random.hpp"
#include "fluidsense/numerics/special.hpp"
#include "fluidsense/numerics/types.hpp"

// Port geometry, spatial correlation and partial observation of the
// port-domain coupling vector. Lengths are in wavelengths.
namespace fluidsense::channel {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct PortLayout {
  int dim = 2;
  int num_ports = 0;
  double aperture_x = 1.0;
  double aperture_y = 1.0;
  int grid_x = 0;  // grid columns (dim = 2)
  int grid_y = 1;  // grid rows (dim = 2)
  std::vector<Point> positions;
};

inline constexpr double kMaxGridAspect = 4.0;

/// dim = 1: K evenly spaced points on [0, W_x].
/// dim = 2: n_x by n_y row-major grid spanning the aperture, with n_x n_y = K and
/// n_x / n_y closest (in log ratio) to W_x / W_y; ties go to the larger n_x.
inline PortLayout build_port_layout(int dim, int num_ports, double aperture_x, double aperture_y = 0.0) {
  if (dim != 1 && dim != 2) throw ConfigError("build_port_layout: dim must be 1 or 2");
  if (num_ports < 2) throw ConfigError("build_port_layout: need at least 2 ports");
  if (!(aperture_x > 0.0) || (dim == 2 && !(aperture_y > 0.0))) {
    throw ConfigError("build_port_layout: aperture must be positive");
  }

  PortLayout layout;
  layout.dim = dim;
  layout.num_ports = num_ports;
  layout.aperture_x = aperture_x;
  layout.aperture_y = dim == 2 ? aperture_y : 0.0;
  layout.positions.reserve(static_cast<std::size_t>(num_ports));

  if (dim == 1) {
    layout.grid_x = num_ports;
    layout.grid_y = 1;
    for (int k = 0; k < num_ports; ++k) {
      layout.positions.push_back({k * aperture_x / (num_ports - 1), 0.0});
    }
    return layout;
  }

  const double target = aperture_x / aperture_y;
  int best_nx = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (int nx = 2; nx <= num_ports / 2; ++nx) {
    if (num_ports % nx != 0) continue;
    const int ny = num_ports / nx;
    if (ny < 2) continue;
    const double score = std::fabs(std::log((static_cast<double>(nx) / ny) / target));
    if (score <= best_score + 1e-12) {
      best_score = score;
      best_nx = nx;
    }
  }
  if (best_nx == 0 || best_score > std::log(kMaxGridAspect) + 1e-12) {
    throw ConfigError("build_port_layout: " + std::to_string(num_ports) +
                      " ports admit no grid within 4:1 of the aperture aspect ratio");
  }
  layout.grid_x = best_nx;
  layout.grid_y = num_ports / best_nx;
  for (int j = 0; j < layout.grid_y; ++j) {
    for (int i = 0; i < layout.grid_x; ++i) {
      layout.positions.push_back({i * aperture_x / (layout.grid_x - 1), j * aperture_y / (layout.grid_y - 1)});
    }
  }
  return layout;
}

enum class Regime { RichIsotropic, FiniteScattering };

inline Regime parse_regime(const std::string& s) {
  if (s == "rich" || s == "rich_isotropic") return Regime::RichIsotropic;
  if (s == "finite" || s == "finite_scattering") return Regime::FiniteScattering;
  throw ConfigError("unknown regime '" + s + "' (expected rich or finite)");
}

struct ChannelModel {
  Regime regime = Regime::RichIsotropic;
  int num_paths = 0;
  std::vector<Point> directions;  // unit vectors, FiniteScattering only
  double sigma_g2 = 1.0;
  ComplexMatrix correlation;       // R_K
  ComplexMatrix correlation_chol;  // lower factor of R_K (jittered when needed)

  Eigen::Index num_ports() const { return correlation.rows(); }
};

/// R_K for the layout. FiniteScattering draws its L directions from rng
/// (uniform on the unit circle for dim 2, +/-1 along x for dim 1).
inline ChannelModel build_correlation_matrix(const PortLayout& layout, Regime regime, int num_paths,
                                             numerics::RngStream& rng, double sigma_g2 = 1.0) {
  if (regime == Regime::FiniteScattering && num_paths < 1) {
    throw ConfigError("build_correlation_matrix: finite scattering needs num_paths >= 1");
  }
  if (!(sigma_g2 >= 0.0)) throw ConfigError("build_correlation_matrix: sigma_g2 must be >= 0");

  ChannelModel model;
  model.regime = regime;
  model.sigma_g2 = sigma_g2;
  const auto k = static_cast<Eigen::Index>(layout.positions.size());
  model.correlation.resize(k, k);

  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (regime == Regime::RichIsotropic) {
    for (Eigen::Index a = 0; a < k; ++a) {
      model.correlation(a, a) = 1.0;
      for (Eigen::Index b = a + 1; b < k; ++b) {
        const double r = numerics::bessel_j0(two_pi * distance(layout.positions[a], layout.positions[b]));
        model.correlation(a, b) = r;
        model.correlation(b, a) = r;
      }
    }
  } else {
    model.num_paths = num_paths;
    for (int i = 0; i < num_paths; ++i) {
      if (layout.dim == 1) {
        model.directions.push_back({rng.uniform() < 0.5 ? -1.0 : 1.0, 0.0});
      } else {
        const double phi = two_pi * rng.uniform();
        model.directions.push_back({std::cos(phi), std::sin(phi)});
      }
    }
    for (Eigen::Index a = 0; a < k; ++a) {
      model.correlation(a, a) = 1.0;
      for (Eigen::Index b = a + 1; b < k; ++b) {
        const double dx = layout.positions[a].x - layout.positions[b].x;
        const double dy = layout.positions[a].y - layout.positions[b].y;
        double acc = 0.0;
        for (const Point& u : model.directions) acc += std::cos(two_pi * (u.x * dx + u.y * dy));
        const double r = acc / num_paths;
        model.correlation(a, b) = r;
        model.correlation(b, a) = r;
      }
    }
  }
  model.correlation_chol = numerics::cholesky_psd(model.correlation);
  return model;
}

/// Channel model around an explicit correlation matrix (tests, custom geometries).
inline ChannelModel channel_from_correlation(const ComplexMatrix& correlation, double sigma_g2 = 1.0) {
  if (!is_hermitian(correlation, 1e-10)) throw ConfigError("channel_from_correlation: matrix not Hermitian");
  ChannelModel model;
  model.sigma_g2 = sigma_g2;
  model.correlation = correlation;
  model.correlation_chol = numerics::cholesky_psd(correlation);
  return model;
}

/// g_B ~ CN(0, sigma_g^2 R_K).
inline ComplexVector sample_port_channel(const ChannelModel& model, numerics::RngStream& rng) {
  const ComplexVector w = numerics::sample_standard_complex_gaussian(rng, model.num_ports());
  ComplexVector g = model.correlation_chol.triangularView<Eigen::Lower>() * w;
  return std::sqrt(model.sigma_g2) * g;
}

struct Observation {
  Eigen::VectorXi mask;    // m, exactly M_obs ones
  ComplexVector observed;  // m (.) g_B (plus optional observation noise)
  RealVector features;     // o_B = [m; Re(g~); Im(g~)]

  int num_observed() const { return mask.sum(); }
};

/// Reveals M_obs ports chosen uniformly without replacement. With
/// sigma_obs2 > 0, each revealed entry gets CN(0, sigma_obs2) noise.
inline Observation observe_channel(const ComplexVector& g, int num_observed, numerics::RngStream& rng,
                                   double sigma_obs2 = 0.0) {
  const auto k = static_cast<int>(g.size());
  if (num_observed < 1 || num_observed > k) {
    throw ConfigError("observe_channel: M_obs=" + std::to_string(num_observed) + " outside [1, " +
                      std::to_string(k) + "]");
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < num_observed; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }

  Observation obs;
  obs.mask = Eigen::VectorXi::Zero(k);
  obs.observed = ComplexVector::Zero(k);
  for (int i = 0; i < num_observed; ++i) obs.mask[order[static_cast<std::size_t>(i)]] = 1;
  for (int i = 0; i < k; ++i) {
    if (obs.mask[i] == 0) continue;
    obs.observed[i] = g[i];
    if (sigma_obs2 > 0.0) {
      const double s = std::sqrt(sigma_obs2 / 2.0);
      obs.observed[i] += Complex(s * rng.normal(), s * rng.normal());
    }
  }
  obs.features.resize(3 * k);
  for (int i = 0; i < k; ++i) {
    obs.features[i] = obs.mask[i];
    obs.features[k + i] = obs.observed[i].real();
    obs.features[2 * k + i] = obs.observed[i].imag();
  }
  return obs;
}

}  // namespace fluidsense::channel
