#pragma once

#include <optional>
#include <string>

#include "fluidsense/channel.hpp"
#include "fluidsense/control.hpp"
#include "fluidsense/energy.hpp"
#include "fluidsense/sensing.hpp"

// Random physical scenarios: channel draw, geometry, partial observation and
// the policy context built from them.
namespace fluidsense::scenario {

struct ScenarioConfig {
  int dim = 2;
  int num_ports = 16;
  double aperture_x = 1.0;
  double aperture_y = 1.0;
  channel::Regime regime = channel::Regime::RichIsotropic;
  int num_paths = 5;
  double sigma_g2 = 1.0;
  double sigma_obs2 = 0.0;

  // Closed integer ranges; experiments pin min == max.
  int m_active_min = 4;
  int m_active_max = 4;
  int m_obs_min = 8;
  int m_obs_max = 8;

  sensing::SceneParams scene;
  int delta = 2;
  int guard_g = 2;

  control::ReflectionConfig reflection;
  double tau_q = 0.1;
  control::Mode mode = control::Mode::Cooperative;
  bool mixed_mode = false;  // draw the mode per scenario
  std::optional<energy::EnergyWeights> weights;  // default: per-mode weights

  energy::EnergyWeights weights_for(control::Mode m) const {
    return weights ? *weights : energy::EnergyWeights::for_mode(m);
  }

  void validate() const {
    if (num_ports < 2) throw ConfigError("num_ports must be >= 2");
    if (m_active_min < 1 || m_active_min > m_active_max || m_active_max > num_ports) {
      throw ConfigError("m_active range [" + std::to_string(m_active_min) + ", " + std::to_string(m_active_max) +
                        "] must lie in [1, num_ports]");
    }
    if (m_obs_min < 1 || m_obs_min > m_obs_max || m_obs_max > num_ports) {
      throw ConfigError("m_obs range [" + std::to_string(m_obs_min) + ", " + std::to_string(m_obs_max) +
                        "] must lie in [1, num_ports]");
    }
    if (guard_g < 0) throw ConfigError("guard_g must be >= 0");
    if (!(tau_q > 0.0)) throw ConfigError("tau_q must be positive");
    if (sigma_obs2 < 0.0) throw ConfigError("sigma_obs2 must be >= 0");
    if (!(scene.alpha_a_mag >= 0.0)) throw ConfigError("alpha_a_mag must be >= 0");
    reflection.validate();
    if (weights) weights->validate();
  }
};

/// Everything that is fixed for a configuration: port layout, sensing scene
/// and, in the rich regime, the channel correlation. Read-only once built.
class ScenarioContext {
 public:
  static ScenarioContext build(const ScenarioConfig& cfg) {
    cfg.validate();
    ScenarioContext ctx;
    ctx.cfg_ = cfg;
    ctx.layout_ = channel::build_port_layout(cfg.dim, cfg.num_ports, cfg.aperture_x, cfg.aperture_y);
    ctx.scene_ = sensing::SensingScene::build(cfg.scene);
    if (cfg.regime == channel::Regime::RichIsotropic) {
      numerics::RngStream unused(0, 0);
      ctx.rich_model_ = channel::build_correlation_matrix(ctx.layout_, cfg.regime, 0, unused, cfg.sigma_g2);
    }
    return ctx;
  }

  const ScenarioConfig& config() const noexcept { return cfg_; }
  const channel::PortLayout& layout() const noexcept { return layout_; }
  const sensing::SensingScene& scene() const noexcept { return scene_; }
  int num_ports() const noexcept { return cfg_.num_ports; }
  int context_length() const noexcept { return control::context_length(cfg_.num_ports); }

  /// Shared model in the rich regime; a fresh direction draw otherwise.
  channel::ChannelModel channel_model(numerics::RngStream& rng) const {
    if (rich_model_) return *rich_model_;
    return channel::build_correlation_matrix(layout_, cfg_.regime, cfg_.num_paths, rng, cfg_.sigma_g2);
  }

 private:
  ScenarioConfig cfg_;
  channel::PortLayout layout_;
  sensing::SensingScene scene_;
  std::optional<channel::ChannelModel> rich_model_;
};

struct Scenario {
  control::Mode mode = control::Mode::Cooperative;
  int m_active = 0;
  int m_obs = 0;
  int theta_a = 0;
  int theta_b = 0;
  ComplexVector g;  // true coupling vector g_B
  channel::Observation observation;
  RealVector context;  // c = [o_B; psi]
  energy::EnergyWeights weights;

  /// Channel vector the energy sees under the given CSI mode.
  const ComplexVector& energy_channel(energy::CsiMode csi) const {
    return csi == energy::CsiMode::Oracle ? g : observation.observed;
  }
};

inline energy::EnergyProblem make_energy_problem(const ScenarioContext& ctx, const Scenario& s, energy::CsiMode csi) {
  const ScenarioConfig& cfg = ctx.config();
  return energy::EnergyProblem(s.energy_channel(csi), ctx.scene(),
                               energy::make_guard_set(s.theta_a, cfg.guard_g, cfg.scene.n_theta), s.theta_b,
                               s.weights, s.m_active, cfg.reflection);
}

/// Draw order: mode (mixed only), M_active, M_obs, theta_A, channel, observation.
inline Scenario draw_scenario(const ScenarioContext& ctx, numerics::RngStream& rng) {
  const ScenarioConfig& cfg = ctx.config();
  Scenario s;
  s.mode = cfg.mode;
  if (cfg.mixed_mode) s.mode = rng.uniform() < 0.5 ? control::Mode::Stealth : control::Mode::Cooperative;
  s.m_active = static_cast<int>(rng.uniform_int(cfg.m_active_min, cfg.m_active_max));
  s.m_obs = static_cast<int>(rng.uniform_int(cfg.m_obs_min, cfg.m_obs_max));
  const int n_theta = cfg.scene.n_theta;
  s.theta_a = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_theta)));
  s.theta_b = sensing::wrap_bin(s.theta_a + cfg.delta, n_theta);
  const channel::ChannelModel model = ctx.channel_model(rng);
  s.g = channel::sample_port_channel(model, rng);
  s.observation = channel::observe_channel(s.g, s.m_obs, rng, cfg.sigma_obs2);
  s.weights = cfg.weights_for(s.mode);

  control::ContextParams p;
  p.num_ports = cfg.num_ports;
  p.m_active = s.m_active;
  p.m_obs = s.m_obs;
  p.aperture_x = cfg.aperture_x;
  p.aperture_y = cfg.dim == 1 ? 0.0 : cfg.aperture_y;
  p.sigma_c2 = cfg.scene.sigma_c2;
  p.sigma_n2 = cfg.scene.sigma_n2;
  p.theta_a = s.theta_a;
  p.theta_b = s.theta_b;
  p.delta = cfg.delta;
  p.n_theta = n_theta;
  p.mode = s.mode;
  s.context = control::encode_context(s.observation, p);
  return s;
}

}  // namespace fluidsense::scenario
