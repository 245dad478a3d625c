#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluidsense/config.hpp"
#include "fluidsense/diffusion.hpp"
#include "fluidsense/numerics/log.hpp"
#include "fluidsense/numerics/parallel.hpp"
#include "fluidsense/scenario.hpp"
#include "fluidsense/sensing.hpp"

// Monte-Carlo sweeps comparing the diffusion policy with fixed baselines.
namespace fluidsense::experiments {

using config::ExperimentConfig;
using config::Scheme;
using config::SweepVar;

inline constexpr std::uint64_t kTrialStream = 0x7121a1;
inline constexpr std::uint64_t kCalibrationStream = 0xca11b;

/// Uniformly spaced ports round(i (K-1) / (M-1)); M = 1 selects port 0.
inline std::vector<int> no_fas_ports(int num_ports, int m_active) {
  if (m_active < 1 || m_active > num_ports) {
    throw ConfigError("no_fas: M_active=" + std::to_string(m_active) + " outside [1, " + std::to_string(num_ports) + "]");
  }
  std::vector<int> ports;
  for (int i = 0; i < m_active; ++i) {
    int p = m_active == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(i) * (num_ports - 1) / (m_active - 1)));
    if (!ports.empty() && p <= ports.back()) p = ports.back() + 1;
    ports.push_back(p);
  }
  return ports;
}

inline std::vector<int> random_ports(int num_ports, int m_active, numerics::RngStream& rng) {
  if (m_active < 1 || m_active > num_ports) {
    throw ConfigError("random_fas: M_active=" + std::to_string(m_active) + " outside [1, " + std::to_string(num_ports) +
                      "]");
  }
  std::vector<int> perm(static_cast<std::size_t>(num_ports));
  for (int i = 0; i < num_ports; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < m_active; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.uniform_index(static_cast<std::uint64_t>(num_ports - i));
    std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
  }
  perm.resize(static_cast<std::size_t>(m_active));
  std::sort(perm.begin(), perm.end());
  return perm;
}

/// Mask for a baseline scheme; nullopt is the "User B absent" sentinel.
inline std::optional<RealVector> baseline_mask(Scheme kind, int num_ports, int m_active, numerics::RngStream& rng) {
  std::vector<int> ports;
  switch (kind) {
    case Scheme::NoUserB:
      return std::nullopt;
    case Scheme::NoFas:
      ports = no_fas_ports(num_ports, m_active);
      break;
    case Scheme::RandomFas:
      ports = random_ports(num_ports, m_active, rng);
      break;
    case Scheme::DiffusionFas:
      throw ConfigError("baseline_mask: diffusion_fas is not a baseline");
  }
  RealVector q = RealVector::Zero(num_ports);
  for (int p : ports) q[p] = 1.0;
  return q;
}

struct ResultRow {
  std::string sweep_var;
  double sweep_value = 0.0;
  std::string scheme;
  double p_d = 0.0;
  double p_det_and_correct = 0.0;
  double p_correct_given_det = std::nan("");
  double rmse_det = std::nan("");
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

struct PointDiagnostics {
  double sweep_value = 0.0;
  std::map<std::string, double> tau;  // keyed by formatted P_FA
  std::uint64_t calibration_draws = 0;
  std::map<std::string, std::size_t> mask_violations;  // per scheme
  std::size_t aborted_candidates = 0;
};

struct SweepOutput {
  std::vector<ResultRow> rows;  // Case 2
  std::map<std::string, std::vector<ResultRow>> rows_by_pfa;  // Case 1
  std::vector<PointDiagnostics> diagnostics;
};

/// Trained policy plus its schedule, checked against a scenario shape.
struct Policy {
  diffusion::Checkpoint checkpoint;
  diffusion::NoiseSchedule schedule;

  static Policy load(const std::filesystem::path& path) {
    Policy p;
    p.checkpoint = diffusion::load_checkpoint(path);
    p.schedule = p.checkpoint.schedule();
    return p;
  }

  void check_compatible(const scenario::ScenarioConfig& cfg) const {
    const int k = checkpoint.model.num_ports();
    const int c = checkpoint.model.context_len();
    if (k != cfg.num_ports || c != control::context_length(cfg.num_ports)) {
      throw ConfigError("checkpoint header mismatch: checkpoint has num_ports=" + std::to_string(k) +
                        ", context_len=" + std::to_string(c) + " but the scenario needs num_ports=" +
                        std::to_string(cfg.num_ports) +
                        ", context_len=" + std::to_string(control::context_length(cfg.num_ports)));
    }
    if (!cfg.mixed_mode && !checkpoint.mode.empty() && checkpoint.mode != control::mode_name(cfg.mode)) {
      throw ConfigError("checkpoint header mismatch: checkpoint mode '" + checkpoint.mode + "' but the scenario mode is '" +
                        control::mode_name(cfg.mode) + "'");
    }
  }
};

/// Configuration of one sweep point.
inline ExperimentConfig apply_sweep_value(ExperimentConfig cfg, SweepVar var, double v) {
  const auto as_int = [&](const char* name) {
    if (std::round(v) != v) throw ConfigError(std::string("sweep value for ") + name + " must be an integer");
    return static_cast<int>(v);
  };
  scenario::ScenarioConfig& s = cfg.scenario;
  switch (var) {
    case SweepVar::MActive:
      s.m_active_min = s.m_active_max = as_int("m_active");
      break;
    case SweepVar::MObs:
      s.m_obs_min = s.m_obs_max = as_int("m_obs");
      break;
    case SweepVar::Aperture:
      s.aperture_x = v;
      s.aperture_y = s.dim == 2 ? v : 0.0;
      break;
    case SweepVar::PFa:
      cfg.p_fa = v;
      break;
    case SweepVar::SigmaC:
      s.scene.sigma_c2 = v * v;
      break;
    case SweepVar::Delta:
      s.delta = as_int("delta");
      break;
  }
  cfg.validate();
  return cfg;
}

/// Thresholds depend only on the disturbance statistics, P_FA and draw count,
/// unless User B is injected into calibration.
class Calibrator {
 public:
  double threshold(const ExperimentConfig& cfg, const scenario::ScenarioContext& ctx, double p_fa) {
    const std::uint64_t draws = cfg.calibration_draws(p_fa);
    const auto& sc = cfg.scenario.scene;
    std::string key = std::to_string(sc.n_theta) + "|" + std::to_string(sc.feat_dim) + "|" + config::format_double(sc.r_c) +
                      "|" + config::format_double(sc.sigma_c2) + "|" + config::format_double(sc.sigma_n2) + "|" +
                      config::format_double(p_fa) + "|" + std::to_string(draws) + "|" + std::to_string(cfg.seed);
    if (cfg.calib_include_user_b) key += "|b|" + config::resolved_text(cfg);
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;

    sensing::InterfererSampler interferer;
    if (cfg.calib_include_user_b) {
      interferer = [&ctx, &cfg](numerics::RngStream& rng) {
        const channel::ChannelModel model = ctx.channel_model(rng);
        const ComplexVector g = channel::sample_port_channel(model, rng);
        const int m = static_cast<int>(rng.uniform_int(cfg.scenario.m_active_min, cfg.scenario.m_active_max));
        RealVector q = RealVector::Zero(ctx.num_ports());
        for (int p : random_ports(ctx.num_ports(), m, rng)) q[p] = 1.0;
        const int theta = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.scenario.scene.n_theta)));
        return std::make_pair(control::effective_coupling(g, q, cfg.scenario.reflection), theta);
      };
    }
    log::info("calibrating CFAR threshold: P_FA=" + config::format_double(p_fa) + ", " + std::to_string(draws) + " draws");
    const double tau = sensing::calibrate_threshold(ctx.scene(), p_fa, draws,
                                                    numerics::RngStream(cfg.seed, kCalibrationStream), interferer);
    cache_.emplace(key, tau);
    return tau;
  }

 private:
  std::map<std::string, double> cache_;
};

enum class Case { Cooperative, Stealth };

struct TrialRecord {
  std::vector<sensing::TrialOutcome> outcome;  // per scheme
  std::vector<char> violation;                 // per scheme
  std::vector<double> elapsed_ms;              // per scheme
  std::size_t aborted = 0;
};

/// One trial: shared scenario and disturbance (common random numbers), one
/// snapshot per scheme.
inline TrialRecord run_trial(const ExperimentConfig& cfg, const scenario::ScenarioContext& ctx, const Policy* policy,
                             Case which, std::size_t index) {
  using clock = std::chrono::steady_clock;
  const numerics::RngStream base = numerics::RngStream(cfg.seed, kTrialStream).derive(index);
  numerics::RngStream scen_rng = base.derive(0);
  const scenario::Scenario s = scenario::draw_scenario(ctx, scen_rng);
  TrialRecord rec;
  rec.outcome.resize(cfg.schemes.size());
  rec.violation.assign(cfg.schemes.size(), 0);
  rec.elapsed_ms.assign(cfg.schemes.size(), 0.0);
  for (std::size_t j = 0; j < cfg.schemes.size(); ++j) {
    const auto start = clock::now();
    const Scheme scheme = cfg.schemes[j];
    std::optional<RealVector> mask;
    if (scheme == Scheme::DiffusionFas) {
      const energy::EnergyProblem problem = scenario::make_energy_problem(ctx, s, cfg.csi_mode);
      numerics::RngStream rng = base.derive(3);
      const diffusion::SampleResult r = diffusion::guided_reverse_sample(
          policy->checkpoint.model, policy->schedule, s.context, problem, cfg.sampler(), rng);
      rec.aborted += r.aborted.size();
      mask = r.mask;
    } else {
      numerics::RngStream rng = base.derive(2);
      mask = baseline_mask(scheme, ctx.num_ports(), s.m_active, rng);
    }
    Complex alpha_b{0.0, 0.0};
    if (mask) {
      if (std::abs(mask->sum() - s.m_active) > 0.0) rec.violation[j] = 1;
      alpha_b = control::effective_coupling(s.g, *mask, cfg.scenario.reflection);
    }
    numerics::RngStream snap_rng = base.derive(1);
    const auto hyp = which == Case::Cooperative ? sensing::Hypothesis::H1 : sensing::Hypothesis::UserBOnly;
    const sensing::Snapshot snap = sensing::synthesize_snapshot(ctx.scene(), s.theta_a, s.theta_b, alpha_b, hyp, snap_rng);
    const sensing::DetectionResult det = sensing::matched_filter_statistics(ctx.scene(), snap.x);
    rec.outcome[j] = {det.t_max, det.theta_hat, which == Case::Cooperative ? s.theta_a : s.theta_b};
    rec.elapsed_ms[j] = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  }
  return rec;
}

inline ResultRow make_row(const ExperimentConfig& cfg, double sweep_value, Scheme scheme,
                          const sensing::MetricsRecord& m, double wall_ms) {
  ResultRow r;
  r.sweep_var = config::sweep_var_name(cfg.sweep_var);
  r.sweep_value = sweep_value;
  r.scheme = config::scheme_name(scheme);
  r.p_d = m.p_d();
  r.p_det_and_correct = m.p_det_and_correct();
  r.p_correct_given_det = m.p_correct_given_det().value_or(std::nan(""));
  r.rmse_det = m.rmse_det().value_or(std::nan(""));
  r.trials = m.trials;
  r.seed = cfg.seed;
  r.wall_ms = cfg.record_timing ? wall_ms : 0.0;
  return r;
}

inline std::optional<Policy> load_policy_if_needed(const ExperimentConfig& cfg) {
  const bool needed = std::find(cfg.schemes.begin(), cfg.schemes.end(), Scheme::DiffusionFas) != cfg.schemes.end();
  if (!needed) return std::nullopt;
  if (cfg.checkpoint.empty()) throw ConfigError("scheme diffusion_fas needs sampler.checkpoint");
  return Policy::load(cfg.checkpoint);
}

inline SweepOutput run_sweep(const ExperimentConfig& cfg, Case which, const Policy* policy_override = nullptr) {
  cfg.validate();
  if (which == Case::Stealth && cfg.sweep_var == SweepVar::PFa) {
    throw ConfigError("sweep-case1 takes its P_FA values from experiment.p_fa_case1; sweep_var p_fa is not allowed");
  }
  std::optional<Policy> owned;
  const Policy* policy = policy_override;
  if (!policy) {
    owned = load_policy_if_needed(cfg);
    if (owned) policy = &*owned;
  }
  Calibrator calibrator;
  SweepOutput out;
  for (double value : cfg.sweep_values) {
    const ExperimentConfig point = apply_sweep_value(cfg, cfg.sweep_var, value);
    if (policy) policy->check_compatible(point.scenario);
    const scenario::ScenarioContext ctx = scenario::ScenarioContext::build(point.scenario);
    PointDiagnostics diag;
    diag.sweep_value = value;
    const std::vector<double> pfas = which == Case::Cooperative ? std::vector<double>{point.p_fa} : point.p_fa_case1;
    std::vector<double> taus;
    for (double p : pfas) {
      taus.push_back(calibrator.threshold(point, ctx, p));
      diag.tau[config::format_double(p)] = taus.back();
    }
    diag.calibration_draws = point.calibration_draws(pfas.front());

    log::info(std::string("sweep ") + config::sweep_var_name(cfg.sweep_var) + "=" + config::format_double(value) + ": " +
              std::to_string(point.trials) + " trials");
    std::vector<TrialRecord> records(static_cast<std::size_t>(point.trials));
    numerics::parallel_for(0, records.size(), point.workers,
                           [&](std::size_t i) { records[i] = run_trial(point, ctx, policy, which, i); });

    for (std::size_t j = 0; j < point.schemes.size(); ++j) {
      std::vector<sensing::TrialOutcome> outcomes;
      outcomes.reserve(records.size());
      std::size_t violations = 0;
      double wall = 0.0;
      for (const TrialRecord& r : records) {
        outcomes.push_back(r.outcome[j]);
        violations += static_cast<std::size_t>(r.violation[j]);
        wall += r.elapsed_ms[j];
      }
      diag.mask_violations[config::scheme_name(point.schemes[j])] = violations;
      for (std::size_t p = 0; p < pfas.size(); ++p) {
        const sensing::MetricsRecord m = sensing::aggregate_metrics(outcomes, taus[p], point.scenario.scene.n_theta);
        ResultRow row = make_row(point, value, point.schemes[j], m, wall);
        if (which == Case::Cooperative) {
          out.rows.push_back(row);
        } else {
          out.rows_by_pfa[config::format_double(pfas[p])].push_back(row);
        }
      }
    }
    for (const TrialRecord& r : records) diag.aborted_candidates += r.aborted;
    out.diagnostics.push_back(diag);
  }
  return out;
}

inline SweepOutput run_case2_sweep(const ExperimentConfig& cfg, const Policy* policy = nullptr) {
  return run_sweep(cfg, Case::Cooperative, policy);
}

inline SweepOutput run_case1_stealth(const ExperimentConfig& cfg, const Policy* policy = nullptr) {
  return run_sweep(cfg, Case::Stealth, policy);
}

// ---------------------------------------------------------------------------
// Output

enum class Format { Csv, Jsonl };

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::Csv;
  if (s == "jsonl") return Format::Jsonl;
  throw ConfigError("unknown format '" + s + "' (expected csv or jsonl)");
}

inline constexpr const char* kCsvHeader =
    "sweep_var,sweep_value,scheme,p_d,p_det_and_correct,p_correct_given_det,rmse_det,trials,seed,wall_ms";

/// %.6g, with "nan" for undefined metrics.
inline std::string format_g6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string render_results(const std::vector<ResultRow>& rows, Format format) {
  std::string out;
  if (format == Format::Csv) {
    out = std::string(kCsvHeader) + "\n";
    for (const ResultRow& r : rows) {
      out += r.sweep_var + "," + format_g6(r.sweep_value) + "," + r.scheme + "," + format_g6(r.p_d) + "," +
             format_g6(r.p_det_and_correct) + "," + format_g6(r.p_correct_given_det) + "," + format_g6(r.rmse_det) + "," +
             std::to_string(r.trials) + "," + std::to_string(r.seed) + "," + format_g6(r.wall_ms) + "\n";
    }
    return out;
  }
  const auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    return std::stod(format_g6(v));
  };
  for (const ResultRow& r : rows) {
    nlohmann::ordered_json j;
    j["sweep_var"] = r.sweep_var;
    j["sweep_value"] = num(r.sweep_value);
    j["scheme"] = r.scheme;
    j["p_d"] = num(r.p_d);
    j["p_det_and_correct"] = num(r.p_det_and_correct);
    j["p_correct_given_det"] = num(r.p_correct_given_det);
    j["rmse_det"] = num(r.rmse_det);
    j["trials"] = r.trials;
    j["seed"] = r.seed;
    j["wall_ms"] = num(r.wall_ms);
    out += j.dump() + "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed on " + path.string());
}

inline void emit_results(const std::vector<ResultRow>& rows, const std::filesystem::path& path, Format format) {
  if (rows.empty()) throw ConfigError("emit_results: no rows");
  write_text(path, render_results(rows, format));
}

/// results.csv -> results_pfa0.01.csv
inline std::filesystem::path pfa_path(const std::filesystem::path& out, const std::string& pfa) {
  std::filesystem::path p = out;
  p.replace_filename(out.stem().string() + "_pfa" + pfa + out.extension().string());
  return p;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& out, const std::string& suffix) {
  std::filesystem::path p = out;
  p.replace_filename(out.stem().string() + suffix);
  return p;
}

inline std::string render_diagnostics(const std::vector<PointDiagnostics>& diags) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const PointDiagnostics& d : diags) {
    nlohmann::ordered_json j;
    j["sweep_value"] = d.sweep_value;
    j["tau"] = d.tau;
    j["calibration_draws"] = d.calibration_draws;
    j["mask_violations"] = d.mask_violations;
    j["aborted_candidates"] = d.aborted_candidates;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

/// Results plus the resolved config (<stem>.config.toml) and diagnostics
/// (<stem>.diagnostics.json) beside them. Returns the result paths written.
inline std::vector<std::filesystem::path> write_sweep(const SweepOutput& out, const ExperimentConfig& cfg,
                                                      const std::filesystem::path& path, Format format) {
  std::vector<std::filesystem::path> written;
  if (out.rows_by_pfa.empty()) {
    emit_results(out.rows, path, format);
    written.push_back(path);
  } else {
    for (const auto& [pfa, rows] : out.rows_by_pfa) {
      written.push_back(pfa_path(path, pfa));
      emit_results(rows, written.back(), format);
    }
  }
  write_text(sidecar_path(path, ".config.toml"), config::resolved_text(cfg));
  write_text(sidecar_path(path, ".diagnostics.json"), render_diagnostics(out.diagnostics));
  return written;
}

}  // namespace fluidsense::experiments
