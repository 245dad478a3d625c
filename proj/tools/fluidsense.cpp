#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "fluidsense/config.hpp"
#include "fluidsense/diffusion.hpp"
#include "fluidsense/expert.hpp"
#include "fluidsense/experiments.hpp"
#include "fluidsense/numerics/log.hpp"

namespace {

using namespace fluidsense;

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kSampleStream = 0x5a3b1e;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
  std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool out_required) {
  cmd->add_option("--config", o.config, "Configuration file");
  cmd->add_option("--seed", o.seed, "Master seed (overrides experiment.seed)");
  auto* out = cmd->add_option("--out", o.out, "Output path");
  if (out_required) out->required();
  cmd->add_option("--workers", o.workers, "Worker threads (overrides experiment.workers)")->check(CLI::PositiveNumber);
  cmd->add_option("--format", o.format, "Result format")->check(CLI::IsMember({"csv", "jsonl"}));
}

config::ExperimentConfig load_config(const CommonOptions& o) {
  config::ExperimentConfig cfg = o.config.empty() ? config::parse("") : config::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) cfg.workers = *o.workers;
  cfg.validate();
  return cfg;
}

nlohmann::json finite_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    std::cout << text;
  } else {
    experiments::write_text(path, text);
  }
}

int run_calibrate(const CommonOptions& o, std::optional<double> p_fa, std::optional<std::uint64_t> draws) {
  config::ExperimentConfig cfg = load_config(o);
  if (p_fa) cfg.p_fa = *p_fa;
  if (draws) cfg.calib_draws = *draws;
  cfg.validate();
  const auto ctx = scenario::ScenarioContext::build(cfg.scenario);
  experiments::Calibrator calibrator;
  const double tau = calibrator.threshold(cfg, ctx, cfg.p_fa);
  nlohmann::ordered_json j;
  j["p_fa"] = cfg.p_fa;
  j["draws"] = cfg.calibration_draws(cfg.p_fa);
  j["seed"] = cfg.seed;
  j["include_user_b"] = cfg.calib_include_user_b;
  j["tau"] = tau;
  write_json(o.out, j);
  return 0;
}

int run_gen_data(const CommonOptions& o, std::optional<std::uint64_t> n, std::optional<int> n_cand, bool greedy,
                 bool mixed) {
  config::ExperimentConfig cfg = load_config(o);
  if (mixed) cfg.scenario.mixed_mode = true;
  const auto ctx = scenario::ScenarioContext::build(cfg.scenario);
  expert::GenerationOptions opt;
  opt.size = n.value_or(cfg.dataset_size);
  opt.n_cand = n_cand.value_or(cfg.oracle_candidates);
  opt.seed = cfg.seed;
  opt.workers = cfg.workers;
  opt.greedy_refine = greedy || cfg.greedy_refine;
  opt.config_hash = config::scenario_hash(cfg);
  expert::generate_dataset(ctx, opt, o.out);
  log::info("gen-data: wrote " + o.out);
  return 0;
}

struct TrainOptions {
  std::string data;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch;
};

int run_train(const CommonOptions& o, const TrainOptions& t) {
  const config::ExperimentConfig cfg = load_config(o);
  const expert::ExpertDataset ds = expert::read_dataset(t.data);
  diffusion::TrainConfig tc;
  tc.epochs = t.epochs.value_or(cfg.epochs);
  tc.lr = t.lr.value_or(cfg.lr);
  tc.batch = t.batch.value_or(cfg.batch);
  tc.seed = cfg.seed;
  const auto schedule = diffusion::build_schedule(cfg.timesteps, cfg.beta_1, cfg.beta_T);
  diffusion::Denoiser<float> net(ds.header.num_ports, ds.header.context_len, cfg.hidden, cfg.time_embed_dim);
  numerics::RngStream init(cfg.seed, kInitStream);
  net.init_uniform(init);
  log::info("train: " + std::to_string(ds.samples.size()) + " samples, " + std::to_string(net.parameter_count()) +
            " parameters, " + std::to_string(tc.epochs) + " epochs");
  const auto result = diffusion::train(ds, schedule, std::move(net), tc, [&](int epoch, double loss) {
    if (epoch == 1 || epoch % 10 == 0 || epoch == tc.epochs) {
      log::info("train: epoch " + std::to_string(epoch) + " loss " + config::format_double(loss));
    }
  });
  diffusion::Checkpoint ck;
  ck.model = result.model;
  ck.steps = schedule.steps;
  ck.beta_1 = schedule.beta_first;
  ck.beta_T = schedule.beta_last;
  ck.dataset_hash = ds.header.config_hash;
  ck.mode = ds.header.mode;
  ck.loss_trace = result.loss_trace;
  diffusion::save_checkpoint(ck, o.out);
  log::info("train: wrote " + o.out);
  return 0;
}

struct SampleOptions {
  std::string ckpt;
  std::optional<double> kappa;
  std::optional<int> n_cand;
  std::optional<std::string> csi_mode;
  std::optional<std::string> grad_mode;
  bool exhaustive = false;
};

int run_sample(const CommonOptions& o, const SampleOptions& s) {
  config::ExperimentConfig cfg = load_config(o);
  if (s.kappa) cfg.kappa = *s.kappa;
  if (s.n_cand) cfg.n_cand = *s.n_cand;
  if (s.csi_mode) cfg.csi_mode = energy::parse_csi_mode(*s.csi_mode);
  if (s.grad_mode) cfg.grad_mode = diffusion::parse_grad_mode(*s.grad_mode);
  cfg.validate();
  const experiments::Policy policy = experiments::Policy::load(s.ckpt);
  policy.check_compatible(cfg.scenario);
  const auto ctx = scenario::ScenarioContext::build(cfg.scenario);
  numerics::RngStream rng(cfg.seed, kSampleStream);
  numerics::RngStream scen_rng = rng.derive(0);
  const scenario::Scenario scen = scenario::draw_scenario(ctx, scen_rng);
  const auto problem = scenario::make_energy_problem(ctx, scen, cfg.csi_mode);
  numerics::RngStream sample_rng = rng.derive(1);
  const auto res =
      diffusion::guided_reverse_sample(policy.checkpoint.model, policy.schedule, scen.context, problem, cfg.sampler(), sample_rng);

  nlohmann::ordered_json j;
  j["mode"] = control::mode_name(scen.mode);
  j["m_active"] = scen.m_active;
  j["m_obs"] = scen.m_obs;
  j["theta_a"] = scen.theta_a;
  j["theta_b"] = scen.theta_b;
  j["csi_mode"] = energy::csi_mode_name(cfg.csi_mode);
  j["grad_mode"] = diffusion::grad_mode_name(cfg.grad_mode);
  j["kappa"] = cfg.kappa;
  j["ports"] = res.ports;
  j["energy"] = res.energy;
  j["best_candidate"] = res.best_candidate;
  nlohmann::json trace = nlohmann::json::array();
  for (double e : res.candidate_energy) trace.push_back(finite_or_null(e));
  j["candidate_energy"] = trace;
  j["aborted"] = res.aborted;
  const Complex alpha = control::effective_coupling(scen.g, res.mask, cfg.scenario.reflection);
  j["alpha_b_abs2"] = std::norm(alpha);
  if (s.exhaustive) {
    const auto best = expert::exhaustive_best_mask(problem);
    j["exhaustive_ports"] = best.ports;
    j["exhaustive_energy"] = best.energy;
  }
  write_json(o.out, j);
  return 0;
}

int run_sweep(const CommonOptions& o, const std::string& ckpt, experiments::Case which) {
  config::ExperimentConfig cfg = load_config(o);
  if (!ckpt.empty()) cfg.checkpoint = ckpt;
  const auto format = experiments::parse_format(o.format);
  const auto out = which == experiments::Case::Cooperative ? experiments::run_case2_sweep(cfg)
                                                           : experiments::run_case1_stealth(cfg);
  for (const auto& p : experiments::write_sweep(out, cfg, o.out, format)) log::info("wrote " + p.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fluid-antenna port selection with a conditional diffusion policy"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate the CFAR threshold under H0");
  add_common(calibrate, common, false);
  std::optional<double> p_fa;
  std::optional<std::uint64_t> draws;
  calibrate->add_option("--p-fa", p_fa, "Target false-alarm rate (overrides sensing.p_fa)");
  calibrate->add_option("--draws", draws, "Monte-Carlo draws (overrides sensing.calib_draws)");

  auto* gen = app.add_subcommand("gen-data", "Generate an expert-imitation dataset (JSON lines)");
  add_common(gen, common, true);
  std::optional<std::uint64_t> n;
  std::optional<int> n_cand_oracle;
  bool greedy = false;
  bool mixed = false;
  gen->add_option("--n", n, "Number of samples (overrides expert.dataset_size)");
  gen->add_option("--n-cand", n_cand_oracle, "Random-search candidates per sample");
  gen->add_flag("--greedy-refine", greedy, "Polish each winner with single-swap search");
  gen->add_flag("--mixed-mode", mixed, "Draw stealth/cooperative per sample");

  auto* train = app.add_subcommand("train", "Train the denoiser on a dataset");
  add_common(train, common, true);
  TrainOptions topt;
  train->add_option("--data", topt.data, "Dataset file")->required();
  train->add_option("--epochs", topt.epochs, "Epochs");
  train->add_option("--lr", topt.lr, "Adam learning rate");
  train->add_option("--batch", topt.batch, "Batch size");

  auto* sample = app.add_subcommand("sample", "Draw one scenario and run guided sampling");
  add_common(sample, common, false);
  SampleOptions sopt;
  sample->add_option("--ckpt", sopt.ckpt, "Checkpoint file")->required();
  sample->add_option("--scenario", common.config, "Scenario configuration (alias of --config)");
  sample->add_option("--kappa", sopt.kappa, "Guidance scale");
  sample->add_option("--n-cand", sopt.n_cand, "Sampling chains");
  sample->add_option("--csi-mode", sopt.csi_mode, "observed or oracle");
  sample->add_option("--grad-mode", sopt.grad_mode, "full or shortcut");
  sample->add_flag("--exhaustive", sopt.exhaustive, "Also report the exhaustive optimum");

  std::string ckpt2, ckpt1;
  auto* case2 = app.add_subcommand("sweep-case2", "Cooperative shaping sweep (User A present)");
  add_common(case2, common, true);
  case2->add_option("--ckpt", ckpt2, "Checkpoint (overrides sampler.checkpoint)");
  auto* case1 = app.add_subcommand("sweep-case1", "Stealth sweep (User B only)");
  add_common(case1, common, true);
  case1->add_option("--ckpt", ckpt1, "Checkpoint (overrides sampler.checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*calibrate) return run_calibrate(common, p_fa, draws);
    if (*gen) return run_gen_data(common, n, n_cand_oracle, greedy, mixed);
    if (*train) return run_train(common, topt);
    if (*sample) return run_sample(common, sopt);
    if (*case2) return run_sweep(common, ckpt2, experiments::Case::Cooperative);
    if (*case1) return run_sweep(common, ckpt1, experiments::Case::Stealth);
  } catch (const ConfigError& e) {
    log::error(std::string("configuration error: ") + e.what());
    return 2;
  } catch (const IoError& e) {
    log::error(std::string("i/o error: ") + e.what());
    return 2;
  } catch (const NumericalError& e) {
    log::error(std::string("numerical failure: ") + e.what());
    return 3;
  } catch (const std::exception& e) {
    log::error(std::string("unexpected error: ") + e.what());
    return 1;
  }
  return 0;
}
