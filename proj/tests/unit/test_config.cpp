#include <gtest/gtest.h>

#include "fluidsense/config.hpp"

namespace {

using namespace fluidsense;

std::string error_of(const std::string& text) {
  try {
    config::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(KeyValueFile, SectionsCommentsAndLists) {
  const auto f = config::KeyValueFile::parse(
      "# top comment\n"
      "[scenario]\n"
      "num_ports = 24   # trailing\n"
      "regime = \"finite\"\n"
      "\n"
      "[experiment]\n"
      "sweep_values = [1, 2.5, 1e-3]\n"
      "schemes = [\"no_fas\", random_fas]\n");
  EXPECT_EQ(f.get<int>("scenario.num_ports"), 24);
  EXPECT_EQ(f.get<std::string>("scenario.regime"), "finite");
  EXPECT_EQ(f.get<std::vector<double>>("experiment.sweep_values"), (std::vector<double>{1, 2.5, 1e-3}));
  EXPECT_EQ(f.get<std::vector<std::string>>("experiment.schemes"), (std::vector<std::string>{"no_fas", "random_fas"}));
  EXPECT_FALSE(f.get<int>("scenario.missing").has_value());
}

TEST(KeyValueFile, DuplicatesAndMalformedLinesRejected) {
  EXPECT_THROW(config::KeyValueFile::parse("[a]\nx = 1\nx = 2\n"), ConfigError);
  EXPECT_THROW(config::KeyValueFile::parse("[a\nx = 1\n"), ConfigError);
  EXPECT_THROW(config::KeyValueFile::parse("[a]\njust words\n"), ConfigError);
  EXPECT_THROW(config::KeyValueFile::parse("[a]\nx =\n"), ConfigError);
}

TEST(ExperimentConfig, UnknownKeyNamesKeyAndLine) {
  const std::string msg = error_of("[scenario]\nnum_ports = 16\nnum_portz = 3\n");
  EXPECT_NE(msg.find("scenario.num_portz"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
}

TEST(ExperimentConfig, BadValuesRejected) {
  EXPECT_NE(error_of("[scenario]\nnum_ports = 1.5\n").find("scenario.num_ports"), std::string::npos);
  EXPECT_FALSE(error_of("[experiment]\nsweep_var = \"bandwidth\"\n").empty());
  EXPECT_FALSE(error_of("[experiment]\nschemes = [\"magic\"]\n").empty());
  EXPECT_FALSE(error_of("[sensing]\np_fa = 1.5\n").empty());
  EXPECT_FALSE(error_of("[scenario]\nnum_ports = 8\nm_active = 9\n").empty());
  EXPECT_FALSE(error_of("[experiment]\ntrials = 0\n").empty());
  EXPECT_FALSE(error_of("[sampler]\nkappa = -1\n").empty());
  EXPECT_FALSE(error_of("[diffusion]\nbeta_1 = 0.5\nbeta_t = 0.1\n").empty());
  EXPECT_FALSE(error_of("[expert]\ngreedy_refine = yes\n").empty());
}

TEST(ExperimentConfig, RangesAndComplexValues) {
  const auto c = config::parse(
      "[scenario]\nnum_ports = 32\nm_active = 5\nm_obs_min = 4\nm_obs_max = 20\n"
      "[control]\nalpha_b0_re = 4\nalpha_b0_im = -1\nmode = \"stealth\"\n"
      "[energy]\ncsi_mode = \"oracle\"\n");
  EXPECT_EQ(c.scenario.m_active_min, 5);
  EXPECT_EQ(c.scenario.m_active_max, 5);
  EXPECT_EQ(c.scenario.m_obs_min, 4);
  EXPECT_EQ(c.scenario.m_obs_max, 20);
  EXPECT_EQ(c.scenario.reflection.alpha_b0, Complex(4.0, -1.0));
  EXPECT_EQ(c.scenario.mode, control::Mode::Stealth);
  EXPECT_EQ(c.csi_mode, energy::CsiMode::Oracle);
  EXPECT_FALSE(c.scenario.weights.has_value());
  EXPECT_EQ(c.scenario.weights_for(c.scenario.mode).lambda_hide, 1.0);
}

TEST(ExperimentConfig, PartialWeightsStartFromModeDefaults) {
  const auto c = config::parse("[control]\nmode = \"stealth\"\n[energy]\nlambda_bin = 0.5\n");
  ASSERT_TRUE(c.scenario.weights.has_value());
  EXPECT_EQ(c.scenario.weights->lambda_hide, 1.0);
  EXPECT_EQ(c.scenario.weights->lambda_int, 0.0);
  EXPECT_EQ(c.scenario.weights->lambda_bin, 0.5);
}

TEST(ExperimentConfig, ResolvedTextRoundTrips) {
  const auto c = config::parse(
      "[scenario]\nnum_ports = 20\naperture_x = 0.75\nm_obs = 6\n[sensing]\nsigma_c2 = 0.3\n"
      "[experiment]\nsweep_var = \"delta\"\nsweep_values = [0, 1, 2]\nseed = 99\nschemes = [\"no_fas\"]\n");
  const std::string text = config::resolved_text(c);
  const auto back = config::parse(text);
  EXPECT_EQ(config::resolved_text(back), text);
  EXPECT_EQ(back.scenario.aperture_x, 0.75);
  EXPECT_EQ(back.scenario.scene.sigma_c2, 0.3);
  EXPECT_EQ(back.sweep_var, config::SweepVar::Delta);
  EXPECT_EQ(back.seed, 99u);
}

TEST(ExperimentConfig, DefaultsAndCalibrationDraws) {
  const auto c = config::parse("");
  EXPECT_EQ(c.trials, 2000);
  EXPECT_EQ(c.kappa, 2.0);
  EXPECT_EQ(c.n_cand, 16);
  EXPECT_EQ(c.grad_mode, diffusion::GradMode::Full);
  EXPECT_EQ(c.calibration_draws(1e-2), 200000u);
  EXPECT_EQ(c.calibration_draws(1e-4), 500000u);
  EXPECT_EQ(c.scenario.delta, 2);
  EXPECT_EQ(c.scenario.guard_g, 2);
}

TEST(ExperimentConfig, ScenarioHashIgnoresTrainingSettings) {
  const auto a = config::parse("[train]\nepochs = 3\n");
  const auto b = config::parse("[train]\nepochs = 4\n");
  const auto c = config::parse("[scenario]\nnum_ports = 17\n");
  EXPECT_EQ(config::scenario_hash(a), config::scenario_hash(b));
  EXPECT_NE(config::scenario_hash(a), config::scenario_hash(c));
}

}  // namespace
