#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fluidsense/expert.hpp"

namespace {

using namespace fluidsense;
using numerics::RngStream;

const sensing::SensingScene& default_scene() {
  static const sensing::SensingScene scene = sensing::SensingScene::build({});
  return scene;
}

energy::EnergyProblem problem_for(const ComplexVector& g, const energy::EnergyWeights& w, int m,
                                  const control::ReflectionConfig& cfg = {}) {
  return energy::EnergyProblem(g, default_scene(), energy::make_guard_set(20, 2, 64), 22, w, m, cfg);
}

scenario::ScenarioConfig small_config(control::Mode mode) {
  scenario::ScenarioConfig cfg;
  cfg.num_ports = 12;
  cfg.aperture_x = 1.0;
  cfg.aperture_y = 1.0;
  cfg.m_active_min = 2;
  cfg.m_active_max = 5;
  cfg.m_obs_min = 4;
  cfg.m_obs_max = 12;
  cfg.mode = mode;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fluidsense_test_" + name);
}

TEST(Binomial, Values) {
  EXPECT_EQ(expert::binomial(10, 3), 120u);
  EXPECT_EQ(expert::binomial(12, 3), 220u);
  EXPECT_EQ(expert::binomial(4, 4), 1u);
  EXPECT_EQ(expert::binomial(4, 5), 0u);
  EXPECT_EQ(expert::binomial(200, 20), std::numeric_limits<std::uint64_t>::max());
}

TEST(Exhaustive, SingleCandidate) {
  RngStream rng(1, 0);
  const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 4);
  const auto p = problem_for(g, energy::EnergyWeights::cooperative(), 4);
  const auto best = expert::exhaustive_best_mask(p);
  EXPECT_EQ(best.ports, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(best.energy, p.evaluate(RealVector::Ones(4)).e_total);
}

TEST(Exhaustive, BeatsIndependentEnumeration) {
  RngStream rng(2, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 10);
    const auto w = rep % 2 ? energy::EnergyWeights::stealth() : energy::EnergyWeights::cooperative();
    const auto p = problem_for(g, w, 3);
    const auto best = expert::exhaustive_best_mask(p);
    int visited = 0;
    for (unsigned mask = 0; mask < 1024; ++mask) {
      if (std::popcount(mask) != 3) continue;
      ++visited;
      RealVector q(10);
      for (int k = 0; k < 10; ++k) q[k] = (mask >> k) & 1u;
      EXPECT_LE(best.energy, p.evaluate(q).e_total + 1e-12);
    }
    EXPECT_EQ(visited, 120);
    EXPECT_NEAR(best.energy, p.evaluate(best.mask(10)).e_total, 1e-12);
  }
}

TEST(Exhaustive, StealthAvoidsTheOnlyCoupledPort) {
  control::ReflectionConfig cfg;
  cfg.rho_0 = 0.0;
  for (int kstar = 0; kstar < 8; ++kstar) {
    ComplexVector g = ComplexVector::Zero(8);
    g[kstar] = Complex(1.3, -0.4);
    const auto best = expert::exhaustive_best_mask(problem_for(g, energy::EnergyWeights::stealth(), 3, cfg));
    EXPECT_EQ(std::count(best.ports.begin(), best.ports.end(), kstar), 0);
    EXPECT_EQ(best.energy, 0.0);
  }
}

TEST(Exhaustive, RejectsHugeSearch) {
  const auto p = problem_for(ComplexVector::Ones(40), energy::EnergyWeights::cooperative(), 20);
  EXPECT_THROW(expert::exhaustive_best_mask(p), ConfigError);
}

TEST(RandomSearch, SingleCandidateWins) {
  RngStream rng(3, 0);
  const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 10);
  const auto p = problem_for(g, energy::EnergyWeights::cooperative(), 3);
  RngStream a(4, 0), b(4, 0);
  const auto res = expert::random_search_expert(p, 1, a);
  const RealVector z = numerics::sample_standard_normal(b, 10);
  EXPECT_EQ(res.z0, z);
  EXPECT_EQ(res.solution.ports, expert::sorted_top_m(z, 3));
  EXPECT_THROW(expert::random_search_expert(p, 0, a), ConfigError);
}

TEST(RandomSearch, NonIncreasingInCandidateCount) {
  RngStream rng(5, 0);
  const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 16);
  const auto p = problem_for(g, energy::EnergyWeights::stealth(), 4);
  double prev = std::numeric_limits<double>::infinity();
  for (int n : {1, 2, 5, 10, 50, 200, 1000}) {
    RngStream r(6, 0);
    const double e = expert::random_search_expert(p, n, r).solution.energy;
    EXPECT_LE(e, prev);
    prev = e;
  }
}

TEST(RandomSearch, MatchesExhaustiveWithManyCandidates) {
  RngStream rng(7, 0);
  int matches = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 10);
    const auto p = problem_for(g, energy::EnergyWeights::cooperative(), 3);
    const double exact = expert::exhaustive_best_mask(p).energy;
    const double found = expert::random_search_expert(p, 5000, rng).solution.energy;
    EXPECT_GE(found, exact - 1e-12);
    matches += std::abs(found - exact) <= 1e-9 ? 1 : 0;
  }
  EXPECT_GE(matches, 99);
}

TEST(RandomSearch, GreedyRefinementKeepsLogitsConsistent) {
  RngStream rng(8, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const ComplexVector g = numerics::sample_standard_complex_gaussian(rng, 16);
    const auto p = problem_for(g, energy::EnergyWeights::stealth(), 5);
    RngStream a = rng.derive(static_cast<std::uint64_t>(rep));
    RngStream b = a;
    const auto plain = expert::random_search_expert(p, 8, a, false);
    const auto refined = expert::random_search_expert(p, 8, b, true);
    EXPECT_LE(refined.solution.energy, plain.solution.energy);
    EXPECT_EQ(expert::sorted_top_m(refined.z0, 5), refined.solution.ports);
    EXPECT_NEAR(p.hard_energy(refined.solution.ports), refined.solution.energy, 0.0);
  }
}

TEST(Dataset, SingleSampleHeader) {
  const auto ctx = scenario::ScenarioContext::build(small_config(control::Mode::Stealth));
  expert::GenerationOptions opt;
  opt.size = 1;
  opt.n_cand = 16;
  opt.config_hash = expert::fnv1a_hex("abc");
  const auto ds = expert::generate_dataset(ctx, opt);
  ASSERT_EQ(ds.samples.size(), 1u);
  EXPECT_EQ(ds.header.num_ports, 12);
  EXPECT_EQ(ds.header.context_len, 48);
  EXPECT_EQ(ds.header.mode, "stealth");
  EXPECT_EQ(ds.samples[0].z0.size(), 12);
  EXPECT_EQ(ds.samples[0].context.size(), 48);
  EXPECT_EQ(expert::fnv1a_hex(""), "cbf29ce484222325");
}

TEST(Dataset, StoredEnergyReproducesFromSeed) {
  for (control::Mode mode : {control::Mode::Stealth, control::Mode::Cooperative}) {
    const auto ctx = scenario::ScenarioContext::build(small_config(mode));
    expert::GenerationOptions opt;
    opt.size = 50;
    opt.n_cand = 64;
    opt.seed = 9;
    const auto ds = expert::generate_dataset(ctx, opt);
    for (const auto& s : ds.samples) {
      const auto sc = expert::regenerate_scenario(ctx, s);
      EXPECT_EQ(sc.context, s.context);
      EXPECT_EQ(sc.m_active, s.m_active);
      const auto p = scenario::make_energy_problem(ctx, sc, energy::CsiMode::Oracle);
      const RealVector q = control::hard_top_m(s.z0, s.m_active);
      EXPECT_NEAR(p.evaluate(q).e_total, s.energy, 1e-9);
    }
  }
}

TEST(Dataset, ExpertBeatsChance) {
  const auto ctx = scenario::ScenarioContext::build(small_config(control::Mode::Cooperative));
  expert::GenerationOptions opt;
  opt.size = 200;
  opt.n_cand = 256;
  opt.seed = 10;
  const auto ds = expert::generate_dataset(ctx, opt);
  int wins = 0;
  RngStream rng(11, 0);
  for (const auto& s : ds.samples) {
    const auto sc = expert::regenerate_scenario(ctx, s);
    const auto p = scenario::make_energy_problem(ctx, sc, energy::CsiMode::Oracle);
    double mean = 0.0;
    for (int i = 0; i < 100; ++i) {
      mean += p.hard_energy(expert::sorted_top_m(numerics::sample_standard_normal(rng, 12), s.m_active));
    }
    wins += s.energy <= mean / 100.0 ? 1 : 0;
  }
  EXPECT_GE(wins, 198);
}

TEST(Dataset, FileIsDeterministicAndRoundTrips) {
  const auto ctx = scenario::ScenarioContext::build(small_config(control::Mode::Cooperative));
  expert::GenerationOptions opt;
  opt.size = 1500;  // spans two checkpoint blocks
  opt.n_cand = 8;
  opt.seed = 12;
  opt.config_hash = "0123456789abcdef";
  const auto a = temp_file("ds_a.jsonl");
  const auto b = temp_file("ds_b.jsonl");
  const auto ds = expert::generate_dataset(ctx, opt, a);
  opt.workers = 3;
  expert::generate_dataset(ctx, opt, b);
  EXPECT_FALSE(std::filesystem::exists(expert::partial_path(a)));
  EXPECT_EQ(slurp(a), slurp(b));
  const auto back = expert::read_dataset(a);
  EXPECT_EQ(back.header.config_hash, "0123456789abcdef");
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); i += 97) {
    EXPECT_EQ(back.samples[i].z0, ds.samples[i].z0);
    EXPECT_EQ(back.samples[i].context, ds.samples[i].context);
    EXPECT_EQ(back.samples[i].energy, ds.samples[i].energy);
    EXPECT_EQ(back.samples[i].scenario_seed, ds.samples[i].scenario_seed);
  }
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Dataset, WideActiveRangeForStealth) {
  auto cfg = small_config(control::Mode::Stealth);
  cfg.num_ports = 64;
  cfg.aperture_x = 2.0;
  cfg.aperture_y = 2.0;
  cfg.m_active_min = 1;
  cfg.m_active_max = 60;
  cfg.m_obs_min = 10;
  cfg.m_obs_max = 30;
  const auto ctx = scenario::ScenarioContext::build(cfg);
  expert::GenerationOptions opt;
  opt.size = 40;
  opt.n_cand = 4;
  const auto ds = expert::generate_dataset(ctx, opt);
  for (const auto& s : ds.samples) {
    EXPECT_GE(s.m_active, 1);
    EXPECT_LE(s.m_active, 60);
    EXPECT_GE(s.m_obs, 10);
    EXPECT_LE(s.m_obs, 30);
    EXPECT_EQ(s.context[192 + 11], 0.0);  // stealth flag
  }
}

TEST(Dataset, MixedModeDrawsBoth) {
  auto cfg = small_config(control::Mode::Cooperative);
  cfg.mixed_mode = true;
  const auto ctx = scenario::ScenarioContext::build(cfg);
  expert::GenerationOptions opt;
  opt.size = 60;
  opt.n_cand = 4;
  const auto ds = expert::generate_dataset(ctx, opt);
  EXPECT_EQ(ds.header.mode, "mixed");
  int stealth = 0;
  for (const auto& s : ds.samples) stealth += s.mode == control::Mode::Stealth ? 1 : 0;
  EXPECT_GT(stealth, 10);
  EXPECT_LT(stealth, 50);
}

TEST(Dataset, UnwritablePathFails) {
  const auto ctx = scenario::ScenarioContext::build(small_config(control::Mode::Cooperative));
  expert::GenerationOptions opt;
  opt.n_cand = 2;
  EXPECT_THROW(expert::generate_dataset(ctx, opt, "/nonexistent_dir/x.jsonl"), IoError);
}

}  // namespace
