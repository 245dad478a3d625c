#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fluidsense/diffusion.hpp"
#include "fluidsense/energy.hpp"
#include "fluidsense/numerics/types.hpp"
#include "fluidsense/scenario.hpp"

// Flat key-value configuration files with [section] headers:
//
//   # comment
//   [scenario]
//   num_ports = 32
//   regime = "rich"
//   [experiment]
//   sweep_values = [5, 10, 20]
//
// Every key must be known; unknown keys and duplicates are errors.
namespace fluidsense::config {

struct Entry {
  std::string value;
  int line = 0;
};

class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>") {
    KeyValueFile f;
    f.origin_ = origin;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
      ++line_no;
      std::string line = strip_comment(raw);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') f.fail(line_no, "malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) f.fail(line_no, "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) f.fail(line_no, "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) f.fail(line_no, "expected key = value");
      const std::string full = section.empty() ? key : section + "." + key;
      if (!f.entries_.emplace(full, Entry{value, line_no}).second) f.fail(line_no, "duplicate key '" + full + "'");
    }
    return f;
  }

  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> raw(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second.value;
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    if (const auto v = raw(key)) out = convert<T>(key, *v);
  }

  template <typename T>
  std::optional<T> get(const std::string& key) const {
    if (const auto v = raw(key)) return convert<T>(key, *v);
    return std::nullopt;
  }

  /// Throws on the first key nobody asked for.
  void reject_unused() const {
    for (const auto& [key, entry] : entries_) {
      if (!used_.count(key)) fail(entry.line, "unknown key '" + key + "'");
    }
  }

  const std::string& origin() const noexcept { return origin_; }

 private:
  template <typename T>
  T convert(const std::string& key, const std::string& v) const {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        return unquote(v);
      } else if constexpr (std::is_same_v<T, bool>) {
        if (v == "true") return true;
        if (v == "false") return false;
        throw ConfigError("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        return parse_integer<T>(v);
      } else if constexpr (std::is_floating_point_v<T>) {
        return static_cast<T>(parse_double(v));
      } else {
        using Elem = typename T::value_type;
        T out;
        for (const std::string& item : split_list(v)) out.push_back(convert<Elem>(key, item));
        return out;
      }
    } catch (const ConfigError& e) {
      fail(entries_.at(key).line, "key '" + key + "': " + e.what());
    }
  }

  template <typename T>
  static T parse_integer(const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
    return out;
  }

  static double parse_double(const std::string& v) {
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
    return out;
  }

  static std::string unquote(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
  }

  static std::vector<std::string> split_list(const std::string& v) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ConfigError("expected a list [a, b, ...]");
    std::vector<std::string> items;
    const std::string body = trim(v.substr(1, v.size() - 2));
    if (body.empty()) return items;
    std::size_t start = 0;
    while (true) {
      const auto comma = body.find(',', start);
      const std::string item = trim(body.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (item.empty()) throw ConfigError("empty list element");
      items.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return items;
  }

  static std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(origin_ + ":" + std::to_string(line) + ": " + msg);
  }

  std::string origin_;
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

enum class SweepVar { MActive, MObs, Aperture, PFa, SigmaC, Delta };

inline SweepVar parse_sweep_var(const std::string& s) {
  if (s == "m_active") return SweepVar::MActive;
  if (s == "m_obs") return SweepVar::MObs;
  if (s == "aperture") return SweepVar::Aperture;
  if (s == "p_fa") return SweepVar::PFa;
  if (s == "sigma_c") return SweepVar::SigmaC;
  if (s == "delta") return SweepVar::Delta;
  throw ConfigError("unknown sweep_var '" + s + "' (expected m_active, m_obs, aperture, p_fa, sigma_c or delta)");
}

inline const char* sweep_var_name(SweepVar v) {
  switch (v) {
    case SweepVar::MActive: return "m_active";
    case SweepVar::MObs: return "m_obs";
    case SweepVar::Aperture: return "aperture";
    case SweepVar::PFa: return "p_fa";
    case SweepVar::SigmaC: return "sigma_c";
    case SweepVar::Delta: return "delta";
  }
  return "?";
}

enum class Scheme { DiffusionFas, RandomFas, NoFas, NoUserB };

inline Scheme parse_scheme(const std::string& s) {
  if (s == "diffusion_fas") return Scheme::DiffusionFas;
  if (s == "random_fas") return Scheme::RandomFas;
  if (s == "no_fas") return Scheme::NoFas;
  if (s == "no_user_b") return Scheme::NoUserB;
  throw ConfigError("unknown scheme '" + s + "' (expected diffusion_fas, random_fas, no_fas or no_user_b)");
}

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::DiffusionFas: return "diffusion_fas";
    case Scheme::RandomFas: return "random_fas";
    case Scheme::NoFas: return "no_fas";
    case Scheme::NoUserB: return "no_user_b";
  }
  return "?";
}

struct ExperimentConfig {
  scenario::ScenarioConfig scenario;

  // [sensing]
  double p_fa = 1e-2;
  std::uint64_t calib_draws = 0;  // 0: max(2e5, 50/P_FA)
  bool calib_include_user_b = false;

  energy::CsiMode csi_mode = energy::CsiMode::Observed;

  // [expert]
  std::uint64_t dataset_size = 20000;
  int oracle_candidates = 2048;
  bool greedy_refine = false;

  // [diffusion]
  int timesteps = 1000;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  std::vector<int> hidden{512, 1024, 1024, 512};
  int time_embed_dim = 128;

  // [train]
  int epochs = 200;
  double lr = 1e-4;
  int batch = 256;

  // [sampler]
  double kappa = 2.0;
  int n_cand = 16;
  diffusion::GradMode grad_mode = diffusion::GradMode::Full;
  std::string checkpoint;

  // [experiment]
  SweepVar sweep_var = SweepVar::MActive;
  std::vector<double> sweep_values{1, 2, 3, 5, 10, 20, 40, 60};
  int trials = 2000;
  std::uint64_t seed = 0;
  std::vector<Scheme> schemes{Scheme::DiffusionFas, Scheme::RandomFas, Scheme::NoFas, Scheme::NoUserB};
  std::vector<double> p_fa_case1{0.01, 0.1};
  bool record_timing = false;
  int workers = 1;

  std::uint64_t calibration_draws(double pfa) const {
    if (calib_draws > 0) return calib_draws;
    return std::max<std::uint64_t>(200000, sensing::min_calibration_draws(pfa));
  }

  diffusion::SamplerConfig sampler() const {
    diffusion::SamplerConfig s;
    s.n_cand = n_cand;
    s.kappa = kappa;
    s.csi_mode = csi_mode;
    s.grad_mode = grad_mode;
    s.tau_q = scenario.tau_q;
    return s;
  }

  void validate() const {
    scenario.validate();
    if (!(p_fa > 0.0 && p_fa < 1.0)) throw ConfigError("sensing.p_fa must be in (0, 1)");
    if (trials < 1) throw ConfigError("experiment.trials must be >= 1");
    if (workers < 1) throw ConfigError("experiment.workers must be >= 1");
    if (sweep_values.empty()) throw ConfigError("experiment.sweep_values must not be empty");
    if (schemes.empty()) throw ConfigError("experiment.schemes must not be empty");
    if (dataset_size < 1) throw ConfigError("expert.dataset_size must be >= 1");
    if (oracle_candidates < 1) throw ConfigError("expert.oracle_candidates must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ConfigError("diffusion.time_embed_dim must be even");
    sampler().validate();
    diffusion::build_schedule(timesteps, beta_1, beta_T);
    for (double p : p_fa_case1) {
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("experiment.p_fa_case1 entries must be in (0, 1)");
    }
  }
};

namespace detail {

inline void read_complex(const KeyValueFile& f, const std::string& prefix, Complex& out) {
  double re = out.real(), im = out.imag();
  f.read(prefix + "_re", re);
  f.read(prefix + "_im", im);
  out = {re, im};
}

inline void read_range(const KeyValueFile& f, const std::string& name, int& lo, int& hi) {
  if (const auto v = f.get<int>("scenario." + name)) lo = hi = *v;
  f.read("scenario." + name + "_min", lo);
  f.read("scenario." + name + "_max", hi);
}

}  // namespace detail

inline ExperimentConfig from_file(const KeyValueFile& f) {
  ExperimentConfig c;
  scenario::ScenarioConfig& s = c.scenario;
  f.read("scenario.dim", s.dim);
  f.read("scenario.num_ports", s.num_ports);
  f.read("scenario.aperture_x", s.aperture_x);
  f.read("scenario.aperture_y", s.aperture_y);
  if (const auto r = f.get<std::string>("scenario.regime")) s.regime = channel::parse_regime(*r);
  f.read("scenario.num_paths", s.num_paths);
  f.read("scenario.sigma_g2", s.sigma_g2);
  f.read("scenario.sigma_obs2", s.sigma_obs2);
  detail::read_range(f, "m_active", s.m_active_min, s.m_active_max);
  detail::read_range(f, "m_obs", s.m_obs_min, s.m_obs_max);

  f.read("sensing.n_theta", s.scene.n_theta);
  f.read("sensing.feat_dim", s.scene.feat_dim);
  f.read("sensing.r_c", s.scene.r_c);
  f.read("sensing.sigma_c2", s.scene.sigma_c2);
  f.read("sensing.sigma_n2", s.scene.sigma_n2);
  f.read("sensing.alpha_a_mag", s.scene.alpha_a_mag);
  f.read("sensing.delta", s.delta);
  f.read("sensing.guard_g", s.guard_g);
  f.read("sensing.p_fa", c.p_fa);
  f.read("sensing.calib_draws", c.calib_draws);
  f.read("sensing.calib_include_user_b", c.calib_include_user_b);

  f.read("control.tau_q", s.tau_q);
  detail::read_complex(f, "control.rho_0", s.reflection.rho_0);
  detail::read_complex(f, "control.rho_1", s.reflection.rho_1);
  detail::read_complex(f, "control.alpha_b0", s.reflection.alpha_b0);
  if (const auto m = f.get<std::string>("control.mode")) s.mode = control::parse_mode(*m);

  const bool custom_weights = f.has("energy.lambda_int") || f.has("energy.lambda_hide") ||
                              f.has("energy.lambda_card") || f.has("energy.lambda_bin");
  if (custom_weights) {
    energy::EnergyWeights w = energy::EnergyWeights::for_mode(s.mode);
    f.read("energy.lambda_int", w.lambda_int);
    f.read("energy.lambda_hide", w.lambda_hide);
    f.read("energy.lambda_card", w.lambda_card);
    f.read("energy.lambda_bin", w.lambda_bin);
    s.weights = w;
  }
  if (const auto m = f.get<std::string>("energy.csi_mode")) c.csi_mode = energy::parse_csi_mode(*m);

  f.read("expert.dataset_size", c.dataset_size);
  f.read("expert.oracle_candidates", c.oracle_candidates);
  f.read("expert.greedy_refine", c.greedy_refine);
  f.read("expert.mixed_mode", s.mixed_mode);

  f.read("diffusion.timesteps", c.timesteps);
  f.read("diffusion.beta_1", c.beta_1);
  f.read("diffusion.beta_t", c.beta_T);
  f.read("diffusion.hidden", c.hidden);
  f.read("diffusion.time_embed_dim", c.time_embed_dim);

  f.read("train.epochs", c.epochs);
  f.read("train.lr", c.lr);
  f.read("train.batch", c.batch);

  f.read("sampler.kappa", c.kappa);
  f.read("sampler.n_cand", c.n_cand);
  if (const auto g = f.get<std::string>("sampler.grad_mode")) c.grad_mode = diffusion::parse_grad_mode(*g);
  f.read("sampler.checkpoint", c.checkpoint);

  if (const auto v = f.get<std::string>("experiment.sweep_var")) c.sweep_var = parse_sweep_var(*v);
  f.read("experiment.sweep_values", c.sweep_values);
  f.read("experiment.trials", c.trials);
  f.read("experiment.seed", c.seed);
  if (const auto names = f.get<std::vector<std::string>>("experiment.schemes")) {
    c.schemes.clear();
    for (const auto& n : *names) c.schemes.push_back(parse_scheme(n));
  }
  f.read("experiment.p_fa_case1", c.p_fa_case1);
  f.read("experiment.record_timing", c.record_timing);
  f.read("experiment.workers", c.workers);

  f.reject_unused();
  c.validate();
  return c;
}

inline ExperimentConfig load(const std::filesystem::path& path) { return from_file(KeyValueFile::load(path)); }

inline ExperimentConfig parse(const std::string& text) { return from_file(KeyValueFile::parse(text)); }

/// Every effective setting, in the same format the parser reads.
inline std::string resolved_text(const ExperimentConfig& c) {
  const scenario::ScenarioConfig& s = c.scenario;
  const auto d = format_double;
  const auto list = [](const auto& values, auto fmt) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + fmt(values[i]);
    return out + "]";
  };
  const auto quote = [](const std::string& v) { return "\"" + v + "\""; };
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  const energy::EnergyWeights w = s.weights_for(s.mode);
  std::ostringstream o;
  o << "[scenario]\n"
    << "dim = " << s.dim << "\nnum_ports = " << s.num_ports << "\naperture_x = " << d(s.aperture_x)
    << "\naperture_y = " << d(s.aperture_y) << "\nregime = "
    << quote(s.regime == channel::Regime::RichIsotropic ? "rich" : "finite") << "\nnum_paths = " << s.num_paths
    << "\nsigma_g2 = " << d(s.sigma_g2) << "\nsigma_obs2 = " << d(s.sigma_obs2) << "\nm_active_min = " << s.m_active_min
    << "\nm_active_max = " << s.m_active_max << "\nm_obs_min = " << s.m_obs_min << "\nm_obs_max = " << s.m_obs_max
    << "\n\n[sensing]\n"
    << "n_theta = " << s.scene.n_theta << "\nfeat_dim = " << s.scene.feat_dim << "\nr_c = " << d(s.scene.r_c)
    << "\nsigma_c2 = " << d(s.scene.sigma_c2) << "\nsigma_n2 = " << d(s.scene.sigma_n2)
    << "\nalpha_a_mag = " << d(s.scene.alpha_a_mag) << "\ndelta = " << s.delta << "\nguard_g = " << s.guard_g
    << "\np_fa = " << d(c.p_fa) << "\ncalib_draws = " << c.calib_draws
    << "\ncalib_include_user_b = " << b(c.calib_include_user_b) << "\n\n[control]\n"
    << "tau_q = " << d(s.tau_q) << "\nrho_0_re = " << d(s.reflection.rho_0.real())
    << "\nrho_0_im = " << d(s.reflection.rho_0.imag()) << "\nrho_1_re = " << d(s.reflection.rho_1.real())
    << "\nrho_1_im = " << d(s.reflection.rho_1.imag()) << "\nalpha_b0_re = " << d(s.reflection.alpha_b0.real())
    << "\nalpha_b0_im = " << d(s.reflection.alpha_b0.imag()) << "\nmode = " << quote(control::mode_name(s.mode))
    << "\n\n[energy]\n";
  if (s.weights || !s.mixed_mode) {
    o << "lambda_int = " << d(w.lambda_int) << "\nlambda_hide = " << d(w.lambda_hide)
      << "\nlambda_card = " << d(w.lambda_card) << "\nlambda_bin = " << d(w.lambda_bin) << "\n";
  }
  o << "csi_mode = " << quote(energy::csi_mode_name(c.csi_mode)) << "\n\n[expert]\n"
    << "dataset_size = " << c.dataset_size << "\noracle_candidates = " << c.oracle_candidates
    << "\ngreedy_refine = " << b(c.greedy_refine) << "\nmixed_mode = " << b(s.mixed_mode) << "\n\n[diffusion]\n"
    << "timesteps = " << c.timesteps << "\nbeta_1 = " << d(c.beta_1) << "\nbeta_t = " << d(c.beta_T)
    << "\nhidden = " << list(c.hidden, [](int v) { return std::to_string(v); })
    << "\ntime_embed_dim = " << c.time_embed_dim << "\n\n[train]\n"
    << "epochs = " << c.epochs << "\nlr = " << d(c.lr) << "\nbatch = " << c.batch << "\n\n[sampler]\n"
    << "kappa = " << d(c.kappa) << "\nn_cand = " << c.n_cand
    << "\ngrad_mode = " << quote(diffusion::grad_mode_name(c.grad_mode)) << "\ncheckpoint = " << quote(c.checkpoint)
    << "\n\n[experiment]\n"
    << "sweep_var = " << quote(sweep_var_name(c.sweep_var)) << "\nsweep_values = " << list(c.sweep_values, d)
    << "\ntrials = " << c.trials << "\nseed = " << c.seed
    << "\nschemes = " << list(c.schemes, [&](Scheme v) { return quote(scheme_name(v)); })
    << "\np_fa_case1 = " << list(c.p_fa_case1, d) << "\nrecord_timing = " << b(c.record_timing)
    << "\nworkers = " << c.workers << "\n";
  return o.str();
}

/// Hash of the settings that shape generated data (scenario and expert sections).
inline std::string scenario_hash(const ExperimentConfig& c) {
  const std::string text = resolved_text(c);
  const auto cut = text.find("[diffusion]");
  return expert::fnv1a_hex(text.substr(0, cut));
}

}  // namespace fluidsense::config
