#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fluidsense/control.hpp"
#include "fluidsense/energy.hpp"
#include "fluidsense/numerics/log.hpp"
#include "fluidsense/numerics/parallel.hpp"
#include "fluidsense/numerics/random.hpp"
#include "fluidsense/scenario.hpp"

// Expert labels for imitation: randomized candidate search under full CSI,
// an exhaustive solver for small K, and the JSON-lines dataset around them.
namespace fluidsense::expert {

inline constexpr std::uint64_t kMaxExhaustiveCandidates = 1'000'000;

/// C(n, k), saturating at uint64 max.
inline std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) {
    const std::uint64_t num = static_cast<std::uint64_t>(n - k + i);
    if (r > std::numeric_limits<std::uint64_t>::max() / num) return std::numeric_limits<std::uint64_t>::max();
    r = r * num / static_cast<std::uint64_t>(i);
  }
  return r;
}

struct MaskSolution {
  std::vector<int> ports;  // ascending
  double energy = std::numeric_limits<double>::infinity();

  RealVector mask(int num_ports) const {
    RealVector q = RealVector::Zero(num_ports);
    for (int k : ports) q[k] = 1.0;
    return q;
  }
};

/// Enumerates every M-subset in lexicographic order of the sorted index
/// set; ties keep the first subset visited.
inline MaskSolution exhaustive_best_mask(const energy::EnergyProblem& problem) {
  const int k = problem.num_ports();
  const int m = problem.m_active();
  const std::uint64_t count = binomial(k, m);
  if (count > kMaxExhaustiveCandidates) {
    throw ConfigError("exhaustive_best_mask: C(" + std::to_string(k) + ", " + std::to_string(m) + ") = " +
                      std::to_string(count) + " exceeds the limit of " + std::to_string(kMaxExhaustiveCandidates));
  }
  std::vector<int> idx(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) idx[static_cast<std::size_t>(i)] = i;
  MaskSolution best;
  while (true) {
    const double e = problem.hard_energy(idx);
    if (e < best.energy) {
      best.energy = e;
      best.ports = idx;
    }
    int i = m - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == k - m + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < m; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return best;
}

inline MaskSolution exhaustive_best_mask(const ComplexVector& g_b, const sensing::SensingScene& scene,
                                         const energy::GuardSet& guard, int theta_b,
                                         const energy::EnergyWeights& weights, int m_active,
                                         const control::ReflectionConfig& cfg) {
  return exhaustive_best_mask(energy::EnergyProblem(g_b, scene, guard, theta_b, weights, m_active, cfg));
}

struct SearchResult {
  RealVector z0;  // winning logits
  MaskSolution solution;
};

inline std::vector<int> sorted_top_m(const RealVector& z, int m) {
  std::vector<int> ports = control::top_m_indices(z, m);
  std::sort(ports.begin(), ports.end());
  return ports;
}

/// Single-swap local search on the winner. Swapping the two logits keeps
/// hard_top_m(z0) equal to the refined mask.
inline void greedy_swap_refine(const energy::EnergyProblem& problem, SearchResult& res) {
  const int k = problem.num_ports();
  bool improved = true;
  while (improved) {
    improved = false;
    std::vector<char> selected(static_cast<std::size_t>(k), 0);
    for (int p : res.solution.ports) selected[static_cast<std::size_t>(p)] = 1;
    for (std::size_t a = 0; a < res.solution.ports.size() && !improved; ++a) {
      for (int out = 0; out < k && !improved; ++out) {
        if (selected[static_cast<std::size_t>(out)]) continue;
        std::vector<int> trial = res.solution.ports;
        const int in = trial[a];
        trial[a] = out;
        std::sort(trial.begin(), trial.end());
        const double e = problem.hard_energy(trial);
        if (e < res.solution.energy) {
          std::swap(res.z0[in], res.z0[out]);
          res.solution = {trial, e};
          improved = true;
        }
      }
    }
  }
}

/// N_cand i.i.d. standard-normal logit vectors, each projected by top-M and
/// scored with the problem's energy; keeps the first minimizer.
inline SearchResult random_search_expert(const energy::EnergyProblem& problem, int n_cand, numerics::RngStream& rng,
                                         bool greedy_refine = false) {
  if (n_cand < 1) throw ConfigError("random_search_expert: N_cand must be >= 1");
  const int k = problem.num_ports();
  const int m = problem.m_active();
  SearchResult best;
  RealVector z(k);
  for (int j = 0; j < n_cand; ++j) {
    for (int i = 0; i < k; ++i) z[i] = rng.normal();
    std::vector<int> ports = sorted_top_m(z, m);
    const double e = problem.hard_energy(ports);
    if (e < best.solution.energy) {
      best.solution = {std::move(ports), e};
      best.z0 = z;
    }
  }
  if (greedy_refine) greedy_swap_refine(problem, best);
  return best;
}

struct ExpertSample {
  std::uint64_t index = 0;
  std::uint64_t scenario_seed = 0;  // RngStream(seed, stream) regenerates the scenario
  std::uint64_t scenario_stream = 0;
  control::Mode mode = control::Mode::Cooperative;
  int m_active = 0;
  int m_obs = 0;
  double energy = 0.0;
  RealVector z0;
  RealVector context;
};

struct DatasetHeader {
  int version = 1;
  int num_ports = 0;
  int n_theta = 0;
  int feat_dim = 0;
  int context_len = 0;
  std::string config_hash;
  std::string mode;  // stealth, cooperative or mixed
  std::uint64_t seed = 0;
  std::uint64_t size = 0;
  int n_cand = 0;
};

struct ExpertDataset {
  DatasetHeader header;
  std::vector<ExpertSample> samples;
};

struct GenerationOptions {
  std::uint64_t size = 1;
  int n_cand = 2048;
  std::uint64_t seed = 0;
  int workers = 1;
  bool greedy_refine = false;
  std::string config_hash;
};

inline constexpr std::uint64_t kDatasetStream = 0xda7a;
inline constexpr std::size_t kCheckpointEvery = 1000;

/// 64-bit FNV-1a as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Rebuilds the scenario behind a stored sample.
inline scenario::Scenario regenerate_scenario(const scenario::ScenarioContext& ctx, const ExpertSample& s) {
  numerics::RngStream rng(s.scenario_seed, s.scenario_stream);
  return scenario::draw_scenario(ctx, rng);
}

inline ExpertSample make_sample(const scenario::ScenarioContext& ctx, std::uint64_t index,
                                const GenerationOptions& opt) {
  const numerics::RngStream base = numerics::RngStream(opt.seed, kDatasetStream).derive(index);
  numerics::RngStream scenario_rng = base.derive(0);
  numerics::RngStream search_rng = base.derive(1);
  ExpertSample out;
  out.index = index;
  out.scenario_seed = scenario_rng.seed();
  out.scenario_stream = scenario_rng.stream();
  const scenario::Scenario s = scenario::draw_scenario(ctx, scenario_rng);
  const energy::EnergyProblem problem = scenario::make_energy_problem(ctx, s, energy::CsiMode::Oracle);
  SearchResult res = random_search_expert(problem, opt.n_cand, search_rng, opt.greedy_refine);
  out.mode = s.mode;
  out.m_active = s.m_active;
  out.m_obs = s.m_obs;
  out.energy = res.solution.energy;
  out.z0 = std::move(res.z0);
  out.context = s.context;
  return out;
}

inline nlohmann::json header_to_json(const DatasetHeader& h) {
  return {{"format", "fluidsense-expert-dataset"}, {"version", h.version}, {"num_ports", h.num_ports},
          {"n_theta", h.n_theta}, {"feat_dim", h.feat_dim}, {"context_len", h.context_len},
          {"config_hash", h.config_hash}, {"mode", h.mode}, {"seed", h.seed}, {"size", h.size},
          {"n_cand", h.n_cand}};
}

inline DatasetHeader header_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "fluidsense-expert-dataset") throw ConfigError("dataset: unrecognised header");
  DatasetHeader h;
  h.version = j.at("version").get<int>();
  if (h.version != 1) throw ConfigError("dataset: unsupported version " + std::to_string(h.version));
  h.num_ports = j.at("num_ports").get<int>();
  h.n_theta = j.at("n_theta").get<int>();
  h.feat_dim = j.at("feat_dim").get<int>();
  h.context_len = j.at("context_len").get<int>();
  h.config_hash = j.at("config_hash").get<std::string>();
  h.mode = j.at("mode").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.size = j.at("size").get<std::uint64_t>();
  h.n_cand = j.at("n_cand").get<int>();
  return h;
}

inline std::vector<double> to_std(const RealVector& v) { return {v.data(), v.data() + v.size()}; }

inline RealVector from_std(const std::vector<double>& v) {
  return Eigen::Map<const RealVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json sample_to_json(const ExpertSample& s) {
  return {{"index", s.index}, {"scenario_seed", s.scenario_seed}, {"scenario_stream", s.scenario_stream},
          {"mode", control::mode_name(s.mode)}, {"m_active", s.m_active}, {"m_obs", s.m_obs},
          {"energy", s.energy}, {"z0", to_std(s.z0)}, {"c", to_std(s.context)}};
}

inline ExpertSample sample_from_json(const nlohmann::json& j) {
  ExpertSample s;
  s.index = j.at("index").get<std::uint64_t>();
  s.scenario_seed = j.at("scenario_seed").get<std::uint64_t>();
  s.scenario_stream = j.at("scenario_stream").get<std::uint64_t>();
  s.mode = control::parse_mode(j.at("mode").get<std::string>());
  s.m_active = j.at("m_active").get<int>();
  s.m_obs = j.at("m_obs").get<int>();
  s.energy = j.at("energy").get<double>();
  s.z0 = from_std(j.at("z0").get<std::vector<double>>());
  s.context = from_std(j.at("c").get<std::vector<double>>());
  return s;
}

inline DatasetHeader make_header(const scenario::ScenarioContext& ctx, const GenerationOptions& opt) {
  const scenario::ScenarioConfig& cfg = ctx.config();
  DatasetHeader h;
  h.num_ports = cfg.num_ports;
  h.n_theta = cfg.scene.n_theta;
  h.feat_dim = cfg.scene.feat_dim;
  h.context_len = ctx.context_length();
  h.config_hash = opt.config_hash;
  h.mode = cfg.mixed_mode ? "mixed" : control::mode_name(cfg.mode);
  h.seed = opt.seed;
  h.size = opt.size;
  h.n_cand = opt.n_cand;
  return h;
}

inline std::filesystem::path partial_path(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".partial");
}

/// Generates the dataset in blocks of kCheckpointEvery samples. With an
/// output path, each block is appended to `<out>.partial` and flushed; the
/// file is renamed to `out` only once complete.
inline ExpertDataset generate_dataset(const scenario::ScenarioContext& ctx, const GenerationOptions& opt,
                                      const std::filesystem::path& out = {}) {
  if (opt.size < 1) throw ConfigError("generate_dataset: N must be >= 1");
  if (opt.n_cand < 1) throw ConfigError("generate_dataset: N_cand must be >= 1");
  ExpertDataset ds;
  ds.header = make_header(ctx, opt);
  ds.samples.resize(opt.size);

  std::ofstream file;
  const std::filesystem::path partial = out.empty() ? out : partial_path(out);
  if (!out.empty()) {
    file.open(partial, std::ios::out | std::ios::trunc);
    if (!file) throw IoError("cannot open " + partial.string() + " for writing");
    file << header_to_json(ds.header).dump() << '\n';
  }
  for (std::size_t block = 0; block < opt.size; block += kCheckpointEvery) {
    const std::size_t end = std::min<std::size_t>(opt.size, block + kCheckpointEvery);
    numerics::parallel_for(block, end, opt.workers, [&](std::size_t i) { ds.samples[i] = make_sample(ctx, i, opt); });
    if (file.is_open()) {
      for (std::size_t i = block; i < end; ++i) file << sample_to_json(ds.samples[i]).dump() << '\n';
      file.flush();
      if (!file) throw IoError("write failed on " + partial.string() + " (partial dataset left in place)");
    }
    log::info("gen-data: " + std::to_string(end) + "/" + std::to_string(opt.size) + " samples");
  }
  if (file.is_open()) {
    file.close();
    if (!file) throw IoError("close failed on " + partial.string());
    std::error_code ec;
    std::filesystem::rename(partial, out, ec);
    if (ec) throw IoError("cannot rename " + partial.string() + " to " + out.string() + ": " + ec.message());
  }
  return ds;
}

inline ExpertDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  ExpertDataset ds;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset " + path.string() + " is empty");
  try {
    ds.header = header_from_json(nlohmann::json::parse(line));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ds.samples.push_back(sample_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset " + path.string() + ": " + e.what());
  }
  for (const ExpertSample& s : ds.samples) {
    if (s.z0.size() != ds.header.num_ports || s.context.size() != ds.header.context_len) {
      throw ConfigError("dataset " + path.string() + ": sample " + std::to_string(s.index) +
                        " does not match header shapes");
    }
  }
  if (ds.samples.size() != ds.header.size) {
    throw ConfigError("dataset " + path.string() + ": header announces " + std::to_string(ds.header.size) +
                      " samples, found " + std::to_string(ds.samples.size()));
  }
  return ds;
}

}  // namespace fluidsense::expert
