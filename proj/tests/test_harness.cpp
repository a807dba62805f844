#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mevius/app.hpp"

using namespace mevius;
namespace fs = std::filesystem;

namespace {

constexpr double kDt = 0.02;

std::vector<double> sine(int n, double dt, double shift = 0.0, double freq = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = std::sin(2.0 * std::numbers::pi * freq * (i * dt - shift));
  return v;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mevius_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Scenario standing(std::uint64_t seed, double duration = 2.0) {
  Scenario sc;
  sc.name = "standing";
  sc.duration = duration;
  sc.seed = seed;
  sc.commands = {CommandSegment{0.0, Vec3::Zero()}};
  return sc;
}

}  // namespace

// ---------------------------------------------------------------------------
// phase_lag

TEST(PhaseLag, ConstructedThreeSampleShift) {
  const auto ref = sine(300, kDt);
  const auto cur = sine(300, kDt, 3 * kDt);
  EXPECT_NEAR(phase_lag(ref, cur, kDt), 0.060, kDt / 2);
}

TEST(PhaseLag, IdentityIsZero) {
  const auto ref = sine(300, kDt);
  EXPECT_NEAR(phase_lag(ref, ref, kDt), 0.0, kDt / 2);
}

TEST(PhaseLag, ShiftEquivariance) {
  // Non-periodic reference so no lag in the window aliases another.
  std::vector<double> base(400);
  Rng rng(3);
  double x = 0.0;
  for (auto& b : base) b = (x = 0.9 * x + rng.normal());
  const int n = 300;
  const std::vector<double> ref(base.begin() + 20, base.begin() + 20 + n);
  for (int k = 0; k <= 10; ++k) {
    const std::vector<double> cur(base.begin() + 20 - k, base.begin() + 20 - k + n);
    EXPECT_NEAR(phase_lag(ref, cur, kDt), k * kDt, kDt / 2) << "k = " << k;
  }
}

TEST(PhaseLag, NoisySinusoidMonteCarlo) {
  const int n = 500;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto ref = sine(n, kDt);
    auto cur = sine(n, kDt, 0.04);
    for (auto& v : ref) v += 0.05 * rng.normal();
    for (auto& v : cur) v += 0.05 * rng.normal();
    EXPECT_NEAR(phase_lag(ref, cur, kDt), 0.04, 0.005) << "seed " << seed;
  }
}

TEST(PhaseLag, MeanOffsetIgnored) {
  auto ref = sine(300, kDt), cur = sine(300, kDt, 2 * kDt);
  for (auto& v : cur) v += 5.0;
  EXPECT_NEAR(phase_lag(ref, cur, kDt), 0.04, kDt / 2);
}

TEST(PhaseLag, DegenerateInputsThrow) {
  const auto ref = sine(300, kDt);
  EXPECT_THROW(phase_lag(ref, std::vector<double>(300, 1.0), kDt), Error);
  EXPECT_THROW(phase_lag(std::vector<double>(300, 0.0), ref, kDt), Error);
  EXPECT_THROW(phase_lag(ref, sine(299, kDt), kDt), Error);
  EXPECT_THROW(phase_lag(sine(50, kDt), sine(50, kDt), kDt), Error);  // shorter than 2/dt
  EXPECT_THROW(phase_lag(ref, ref, 0.0), Error);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, SyntheticLog) {
  EpisodeLog log;
  log.header.policy_rate = 50.0;
  log.header.duration = 1.0;
  log.header.lag_joint = -1;
  log.header.initial_position = Vec3{1.0, 2.0, 0.4};
  for (int i = 0; i < 4; ++i) {
    PolicyFrame f;
    f.time = i * 0.02;
    f.target.fill(0.1);
    f.q.fill(i % 2 ? 0.2 : 0.0);  // error magnitude 0.1 every frame
    f.qd.fill(i % 2 ? 3.0 : -3.0);
    f.commands = Vec3{0.5, 0.0, 0.0};
    f.base_lin_vel = Vec3{0.5, 0.3, 0.0};
    f.base_position = Vec3{4.0, 6.0, 0.4};
    log.frames.push_back(f);
  }
  log.termination = Termination::Fall;
  log.end_time = 0.08;
  const auto m = metrics_from_log(log);
  for (double r : m.tracking_rms) EXPECT_NEAR(r, 0.1, 1e-15);
  EXPECT_NEAR(m.vibration, 3.0, 1e-15);
  EXPECT_NEAR(m.velocity_tracking_error, 0.3, 1e-15);
  EXPECT_NEAR(m.distance, 5.0, 1e-15);
  EXPECT_FALSE(m.survival);
  ASSERT_TRUE(m.fall_time.has_value());
  EXPECT_DOUBLE_EQ(*m.fall_time, 0.08);
  EXPECT_FALSE(m.phase_lag_valid);
  EXPECT_EQ(metrics_to_json(m)["fall_time"], 0.08);
}

TEST(Metrics, ShortLogHasNoLag) {
  EpisodeLog log;
  log.header.policy_rate = 50.0;
  log.header.lag_joint = 4;
  for (int i = 0; i < 20; ++i) {
    PolicyFrame f;
    f.target[4] = std::sin(i * 0.3);
    f.q[4] = std::sin(i * 0.3 - 0.3);
    log.frames.push_back(f);
  }
  const auto m = metrics_from_log(log);
  EXPECT_FALSE(m.phase_lag_valid);
  EXPECT_EQ(m.phase_lag, 0.0);
}

// ---------------------------------------------------------------------------
// Scenarios

class ScenarioTest : public ::testing::Test {
 protected:
  RobotDescription desc = default_description();
  RuntimeConfig rt;
};

TEST_F(ScenarioTest, SinusoidLagFollowsLatency) {
  const auto delayed = run_scenario(desc, rt, sinusoid_scenario(0.04), nullptr);
  ASSERT_TRUE(delayed.report.survival);
  ASSERT_TRUE(delayed.report.phase_lag_valid);
  EXPECT_GE(delayed.report.phase_lag, 0.033);
  EXPECT_LE(delayed.report.phase_lag, 0.047);

  const auto direct = run_scenario(desc, rt, sinusoid_scenario(0.0), nullptr);
  ASSERT_TRUE(direct.report.phase_lag_valid);
  EXPECT_LT(direct.report.phase_lag, 0.01);
}

TEST_F(ScenarioTest, SameSeedIsByteIdentical) {
  const auto a = run_scenario(desc, rt, standing(7), nullptr);
  const auto b = run_scenario(desc, rt, standing(7), nullptr);
  EXPECT_EQ(metrics_json_text(a.report), metrics_json_text(b.report));
  std::ostringstream la, lb;
  write_episode_log(la, a.log);
  write_episode_log(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
}

TEST_F(ScenarioTest, ZeroActionStandingSurvives) {
  const auto r = run_scenario(desc, rt, standing(1, 5.0), nullptr);
  EXPECT_TRUE(r.report.survival);
  EXPECT_FALSE(r.report.fall_time.has_value());
  EXPECT_EQ(r.report.termination, "completed");
  for (double x : r.report.tracking_rms) EXPECT_TRUE(std::isfinite(x));
}

TEST_F(ScenarioTest, ReplayMatchesOriginalByteForByte) {
  const auto dir = scratch_dir("replay");
  const auto r = run_scenario(desc, rt, standing(11), nullptr);
  write_run_outputs(dir, r);
  const auto again = replay(dir / "log.bin");
  EXPECT_EQ(again, r.report);
  EXPECT_EQ(metrics_json_text(again), slurp(dir / "metrics.json"));
}

TEST_F(ScenarioTest, TruncatedLogNamesLastValidFrame) {
  const auto dir = scratch_dir("truncated");
  const auto r = run_scenario(desc, rt, standing(11, 1.0), nullptr);
  write_run_outputs(dir, r);
  const std::string bytes = slurp(dir / "log.bin");
  const fs::path cut = dir / "cut.bin";
  {
    std::ofstream os(cut, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() * 2 / 3));
  }
  try {
    replay(cut);
    FAIL() << "truncated log accepted";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("corrupt log"), std::string::npos) << msg;
    EXPECT_NE(msg.find("last valid frame: #"), std::string::npos) << msg;
  }
}

TEST_F(ScenarioTest, DifferentSeedGivesDifferentReport) {
  const auto a = run_scenario(desc, rt, standing(1), nullptr);
  const auto b = run_scenario(desc, rt, standing(2), nullptr);
  EXPECT_NE(metrics_json_text(a.report), metrics_json_text(b.report));
}

TEST_F(ScenarioTest, InvalidScenarioRejected) {
  auto sc = standing(1);
  sc.duration = 0.0;
  EXPECT_THROW(run_scenario(desc, rt, sc, nullptr), ConfigError);
  sc = standing(1);
  sc.commands.push_back({5.0, Vec3::Zero()});
  EXPECT_THROW(run_scenario(desc, rt, sc, nullptr), ConfigError);
}

TEST_F(ScenarioTest, AbStudyRejectsEmptySeedSet) {
  AbStudyConfig ab;
  ab.seeds = 0;
  const Mlp net({kObsDim, kActDim});
  EXPECT_THROW(ab_delay_study(desc, rt, ab, net, net), ConfigError);
}

TEST_F(ScenarioTest, AbStudyTableShape) {
  AbStudyConfig ab;
  ab.seeds = 2;
  ab.delays = {0, 2};
  ab.duration = 0.5;
  const Mlp zero({kObsDim, kActDim});
  const auto r = ab_delay_study(desc, rt, ab, zero, zero);
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_EQ(r.cells[0].policy, "delay_trained");
  EXPECT_EQ(r.cells[3].policy, "baseline");
  EXPECT_EQ(r.cells[3].delay, 2);
  // Identical policies never vibrate strictly more than each other.
  for (const auto& [d, f] : r.baseline_worse_fraction) EXPECT_EQ(f, 0.0) << d;
}

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultsProduceDefaultStructs) {
  const Json cfg = default_config();
  const auto rt = runtime_from_config(cfg);
  EXPECT_EQ(rt.gains.kp_calf, 30.0);
  EXPECT_EQ(rt.bus.cycle_rate, 150.0);
  EXPECT_EQ(rt.bus.latency.min, 0.02);
  EXPECT_EQ(rt.bus.latency.max, 0.06);
  EXPECT_NEAR(rt.fall.max_tilt, RuntimeConfig{}.fall.max_tilt, 1e-15);
  const auto tr = train_from_config(cfg);
  EXPECT_EQ(tr.num_envs, 64);
  EXPECT_EQ(tr.delay, DelayRandomization::Off);
  EXPECT_EQ(tr.runtime.bus.latency.kind, LatencyModel::Kind::Fixed);
  const auto sc = scenario_from_config(cfg);
  EXPECT_FALSE(sc.latency.has_value());
  EXPECT_EQ(ab_study_from_config(cfg).delays, (std::vector<int>{0, 1, 2, 3}));
}

TEST(Config, OverridesAreTypedAndStrict) {
  Json cfg = default_config();
  apply_override(cfg, "train.delay_randomization=true");
  apply_override(cfg, "scenario.latency=0.04");
  apply_override(cfg, "scenario.name=hill");
  apply_override(cfg, "runtime.gains.kp_hip=40");
  EXPECT_EQ(train_from_config(cfg).delay, DelayRandomization::UniformFrames);
  EXPECT_EQ(*scenario_from_config(cfg).latency, 0.04);
  EXPECT_EQ(scenario_from_config(cfg).name, "hill");
  EXPECT_EQ(runtime_from_config(cfg).gains.kp_hip, 40.0);
  EXPECT_THROW(apply_override(cfg, "train.no_such_key=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "train.num_envs=\"many\""), ConfigError);
  EXPECT_THROW(apply_override(cfg, "missing_equals"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "train..seed=1"), ConfigError);
}

TEST(Config, ValidationErrorsSurface) {
  Json cfg = default_config();
  apply_override(cfg, "bus.bitrate=1e5");
  EXPECT_THROW(runtime_from_config(cfg), BusOverrunError);
  cfg = default_config();
  apply_override(cfg, "ab_study.seeds=0");
  EXPECT_THROW(ab_study_from_config(cfg), ConfigError);
  cfg = default_config();
  apply_override(cfg, "train.terrains=[\"lava\"]");
  EXPECT_THROW(train_from_config(cfg), ConfigError);
}

TEST(Codec, SelfCheckPasses) {
  const auto r = codec_check(FrameCodecSpec{}, 1, 1000);
  ASSERT_EQ(r.size(), 5u);
  EXPECT_EQ(r[0].codes, 65536u);
  EXPECT_TRUE(codec_check_passed(r));
}

TEST(App, RunWritesAllOutputsAndManifest) {
  const auto dir = scratch_dir("run");
  Json cfg = default_config();
  apply_override(cfg, "scenario.duration=0.5");
  const auto r = run_to_dir(cfg, dir);
  EXPECT_TRUE(r.ok);
  for (const char* f : {"log.bin", "log.csv", "metrics.json", "metrics.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto m = Json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["command"], "run");
  EXPECT_EQ(m["config"]["scenario"]["duration"], 0.5);
}
