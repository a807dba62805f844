#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mevius/runtime.hpp"

using namespace mevius;

namespace {

constexpr double kPi = std::numbers::pi;

SimState rest_state(const RobotDescription& d) {
  SimState s;
  s.base_position = Vec3{0.0, 0.0, 0.4};
  s.q = d.default_pose;
  return s;
}

Mlp random_policy(std::uint64_t seed, double gain) {
  Mlp m({kObsDim, 32, kActDim});
  Rng rng(seed);
  m.init_uniform(rng, gain);
  return m;
}

std::string serialize(const EpisodeLog& log) {
  std::ostringstream os;
  write_episode_log(os, log);
  return os.str();
}

// Plain-loop network evaluation, independent of the Eigen path.
std::vector<double> naive_forward(const Mlp& m, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (int l = 0; l < m.num_layers(); ++l) {
    const auto w = m.weight(l);
    const auto b = m.bias(l);
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double acc = b(r);
      for (Eigen::Index c = 0; c < w.cols(); ++c) acc += w(r, c) * h[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = (l + 1 < m.num_layers()) ? (acc > 0.0 ? acc : std::expm1(acc)) : acc;
    }
    h = std::move(z);
  }
  return h;
}

class SessionTest : public ::testing::Test {
 protected:
  RobotDescription desc = default_description();
  std::shared_ptr<const Terrain> flat = std::make_shared<Terrain>(flat_terrain());

  EpisodeLog run(RuntimeConfig cfg, const Mlp* policy, double duration, std::uint64_t seed, int delay = 0,
                 Vec3 cmd = Vec3::Zero()) {
    Session s(desc, cfg, flat);
    return run_episode(s, policy, {CommandSegment{0.0, cmd}}, spawn_state(s.plant(), *flat), delay, duration, seed);
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Observation

TEST(Observation, RestCaseIsGravityOnly) {
  const auto d = default_description();
  const ObsVec o = build_observation(rest_state(d), d, Vec3::Zero(), ActVec::Zero());
  ASSERT_EQ(o.size(), 48);
  for (int i = 0; i < 48; ++i) {
    const double expect = i == 8 ? -1.0 : 0.0;
    EXPECT_EQ(o[i], expect) << "entry " << i;
  }
}

TEST(Observation, NoseUpQuarterTurnGravityPointsBack) {
  // Nose up: the body x axis turns towards world +z.
  const auto d = default_description();
  SimState s = rest_state(d);
  s.base_orientation = Quat(Eigen::AngleAxisd(-kPi / 2, Vec3::UnitY()));
  ASSERT_NEAR((s.base_orientation * Vec3::UnitX()).z(), 1.0, 1e-12);
  const ObsVec o = build_observation(s, d, Vec3::Zero(), ActVec::Zero());
  EXPECT_NEAR(o[6], -1.0, 1e-9);
  EXPECT_NEAR(o[7], 0.0, 1e-9);
  EXPECT_NEAR(o[8], 0.0, 1e-9);
}

TEST(Observation, ProjectedGravityUnitNormAnyOrientation) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Quat q = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
    EXPECT_NEAR(projected_gravity(q).norm(), 1.0, 1e-12);
  }
}

TEST(Observation, JointVelocityScale) {
  const auto d = default_description();
  SimState s = rest_state(d);
  s.qd.fill(1.0);
  const ObsVec o = build_observation(s, d, Vec3::Zero(), ActVec::Zero());
  for (int j = 0; j < 12; ++j) EXPECT_DOUBLE_EQ(o[24 + j], 0.05);
}

TEST(Observation, LayoutAndScales) {
  const auto d = default_description();
  SimState s = rest_state(d);
  s.base_orientation = Quat(Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ()));  // yawed left
  s.base_lin_vel = Vec3{0.0, 1.0, 0.0};                                   // world +y = body +x
  s.base_ang_vel = Vec3{0.0, 0.0, 2.0};
  s.q[4] += 0.3;
  ActVec prev = ActVec::Zero();
  prev[11] = 0.7;
  const ObsVec o = build_observation(s, d, Vec3{0.5, -0.25, 1.0}, prev);
  EXPECT_NEAR(o[0], 2.0, 1e-12);
  EXPECT_NEAR(o[1], 0.0, 1e-12);
  EXPECT_NEAR(o[5], 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(o[9], 1.0);
  EXPECT_DOUBLE_EQ(o[10], -0.5);
  EXPECT_DOUBLE_EQ(o[11], 0.25);
  EXPECT_NEAR(o[12 + 4], 0.3, 1e-15);
  EXPECT_DOUBLE_EQ(o[47], 0.7);
}

TEST(Observation, NoiseOffByDefaultAndSeeded) {
  const auto d = default_description();
  const SimState s = rest_state(d);
  Rng r0(1);
  EXPECT_EQ(build_observation(s, d, Vec3::Zero(), ActVec::Zero(), {}, {}, &r0),
            build_observation(s, d, Vec3::Zero(), ActVec::Zero()));
  ObsNoise n;
  n.enabled = true;
  Rng a(9), b(9);
  const ObsVec oa = build_observation(s, d, Vec3::Zero(), ActVec::Zero(), {}, n, &a);
  const ObsVec ob = build_observation(s, d, Vec3::Zero(), ActVec::Zero(), {}, n, &b);
  EXPECT_EQ(oa, ob);
  EXPECT_NE(oa, build_observation(s, d, Vec3::Zero(), ActVec::Zero()));
  for (int j = 0; j < 12; ++j) EXPECT_LE(std::abs(oa[24 + j]), 1.5 * 0.05);
  for (int i = 36; i < 48; ++i) EXPECT_EQ(oa[i], 0.0);  // previous action is exact
}

// ---------------------------------------------------------------------------
// Policy network

TEST(PolicyNetwork, ZeroWeightsGiveZeroAction) {
  const Mlp m({kObsDim, 256, 128, 64, kActDim});
  ObsVec o = ObsVec::Random();
  EXPECT_EQ(policy_forward(m, o), ActVec::Zero());
}

TEST(PolicyNetwork, SelectorLayerCopiesJointOffsets) {
  Mlp m({kObsDim, kActDim});
  for (int j = 0; j < kActDim; ++j) m.weight(0)(j, 12 + j) = 1.0;
  Rng rng(2);
  ObsVec o;
  for (int i = 0; i < kObsDim; ++i) o[i] = rng.uniform(-3.0, 3.0);
  const ActVec a = policy_forward(m, o);
  for (int j = 0; j < kActDim; ++j) EXPECT_EQ(a[j], o[12 + j]);
}

TEST(PolicyNetwork, DeterministicAndMatchesPlainLoops) {
  const Mlp m = random_policy(3, 1.0);
  Rng rng(4);
  ObsVec o;
  for (int i = 0; i < kObsDim; ++i) o[i] = rng.uniform(-2.0, 2.0);
  const ActVec a = policy_forward(m, o), b = policy_forward(m, o);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * kActDim), 0);
  const auto ref = naive_forward(m, std::vector<double>(o.data(), o.data() + kObsDim));
  for (int j = 0; j < kActDim; ++j) EXPECT_NEAR(a[j], ref[static_cast<std::size_t>(j)], 1e-12);
}

TEST(PolicyNetwork, ShapeMismatchThrows) {
  EXPECT_THROW(policy_forward(Mlp({47, kActDim}), ObsVec::Zero()), ConfigError);
  EXPECT_THROW(policy_forward(Mlp({kObsDim, 11}), ObsVec::Zero()), ConfigError);
  EXPECT_THROW(Mlp({kObsDim}), ConfigError);
}

TEST(PolicyNetwork, FileRoundTripIsBitExact) {
  Mlp m({kObsDim, 256, 128, 64, kActDim}, Activation::Tanh);
  Rng rng(8);
  m.init_uniform(rng);
  std::stringstream ss;
  write_mlp(ss, m);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "MVPOLICY");
  const Mlp back = read_mlp(ss);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.activation(), Activation::Tanh);

  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_mlp(cut), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream badss(bad);
  EXPECT_THROW(read_mlp(badss), FormatError);
}

TEST(PolicyNetwork, WeightsAreStoredRowMajor) {
  Mlp m({2, 2});
  m.weight(0) << 1.0, 2.0, 3.0, 4.0;
  std::stringstream ss;
  write_mlp(ss, m);
  const std::string b = ss.str();
  const std::size_t off = 8 + 4 * 3 + 4 * 2;
  double w[4];
  std::memcpy(w, b.data() + off, sizeof(w));
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], 2.0);
  EXPECT_EQ(w[2], 3.0);
  EXPECT_EQ(w[3], 4.0);
}

// ---------------------------------------------------------------------------
// Targets

TEST(Targets, ZeroActionIsDefaultPose) {
  const auto d = default_description();
  EXPECT_EQ(action_to_targets(ActVec::Zero(), d), d.default_pose);
}

TEST(Targets, ScaleAndClamp) {
  const auto d = default_description();
  ActVec a = ActVec::Zero();
  a[0] = 0.4;
  EXPECT_NEAR(action_to_targets(a, d)[0], d.default_pose[0] + 0.1, 1e-15);
  a[5] = 1e6;
  a[7] = -1e6;
  const auto t = action_to_targets(a, d);
  EXPECT_EQ(t[5], d.joint_limits[5].upper);
  EXPECT_EQ(t[7], d.joint_limits[7].lower);
}

// ---------------------------------------------------------------------------
// Clock and event queue

TEST(Clock, PeriodsAreWholeTicks) {
  EXPECT_EQ(to_ticks(1e-3), 3000);
  EXPECT_EQ(to_ticks(1.0 / 150.0), 20000);
  EXPECT_EQ(to_ticks(0.02), 60000);
  EXPECT_EQ(to_ticks(BusModel{}.frame_time()), 390);
  RuntimeConfig cfg;
  EXPECT_EQ(cfg.policy_ticks(), 3 * cfg.bus_ticks());
  EXPECT_EQ(cfg.policy_ticks(), 20 * cfg.physics_ticks());
  cfg.policy_rate = 70.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(EventQueue, TickThenKindThenInsertionOrder) {
  EventQueue q;
  q.push(20000, EventKind::Physics);
  q.push(20000, EventKind::Bus);
  q.push(10, EventKind::Physics);
  q.push(20000, EventKind::CommandArrival, 3);
  q.push(20000, EventKind::CommandArrival, 1);
  q.push(20000, EventKind::FeedbackSample);
  q.push(20000, EventKind::Policy);
  q.push(20000, EventKind::FeedbackArrival);
  std::vector<std::pair<Tick, EventKind>> order;
  std::vector<int> motors;
  while (!q.empty()) {
    const Event e = q.pop();
    order.emplace_back(e.tick, e.kind);
    if (e.kind == EventKind::CommandArrival) motors.push_back(e.motor);
  }
  const std::vector<std::pair<Tick, EventKind>> expect{
      {10, EventKind::Physics},          {20000, EventKind::CommandArrival}, {20000, EventKind::CommandArrival},
      {20000, EventKind::FeedbackArrival}, {20000, EventKind::FeedbackSample}, {20000, EventKind::Policy},
      {20000, EventKind::Bus},           {20000, EventKind::Physics}};
  EXPECT_EQ(order, expect);
  EXPECT_EQ(motors, (std::vector<int>{3, 1}));
}

// ---------------------------------------------------------------------------
// Session

TEST_F(SessionTest, ZeroActionStandsFiveSeconds) {
  const auto log = run(RuntimeConfig{}, nullptr, 5.0, 1);
  ASSERT_EQ(log.termination, Termination::Completed) << log.fault;
  EXPECT_EQ(log.frames.size(), 250u);
  const double z0 = log.header.initial_position.z();
  for (const auto& f : log.frames) {
    EXPECT_LE(std::abs(f.base_position.z() - z0), 0.1 * z0) << "t = " << f.time;
  }
}

TEST_F(SessionTest, SameSeedBitIdenticalLog) {
  const Mlp p = random_policy(1, 0.5);
  const auto a = run(RuntimeConfig{}, &p, 1.0, 42, 1, Vec3{0.3, 0.0, 0.0});
  const auto b = run(RuntimeConfig{}, &p, 1.0, 42, 1, Vec3{0.3, 0.0, 0.0});
  EXPECT_EQ(serialize(a), serialize(b));
  const auto c = run(RuntimeConfig{}, &p, 1.0, 43, 1, Vec3{0.3, 0.0, 0.0});
  EXPECT_NE(serialize(a), serialize(c));
}

TEST_F(SessionTest, SnapshotIsOlderThanTickAndBounded) {
  for (double fraction : {1.0, 0.5, 0.0}) {
    RuntimeConfig cfg;
    cfg.bus.latency.command_fraction = fraction;
    const auto log = run(cfg, nullptr, 2.0, 7);
    ASSERT_EQ(log.termination, Termination::Completed);
    const double bound = 1.0 / 50.0 + cfg.bus.latency.max;
    for (const auto& f : log.frames) {
      EXPECT_LT(f.snapshot_time, f.time);
      EXPECT_GE(f.time - f.snapshot_time, 0.0);
      EXPECT_LE(f.time - f.snapshot_time, bound + 1e-12) << "fraction " << fraction << " t = " << f.time;
    }
  }
}

TEST_F(SessionTest, ObservationUsesDecodedFeedback) {
  // Joint angles in the observation sit on the position quantization grid.
  Session s(desc, RuntimeConfig{}, flat);
  s.reset(spawn_state(s.plant(), *flat), 0, 3, 1.0);
  const auto& pos = s.config().codec.position;
  for (int k = 0; k < 10; ++k) s.act(ActVec::Constant(0.2 * (k % 2)));
  const ObsVec o = s.observe(Vec3::Zero());
  bool differs = false;
  for (int j = 0; j < kNumJoints; ++j) {
    const double q = o[12 + j] + desc.default_pose[j];
    const double code = (q - pos.min) / pos.lsb();
    EXPECT_NEAR(code, std::round(code), 1e-6) << "joint " << j;
    differs |= q != s.state().q[j];
  }
  EXPECT_TRUE(differs);
}

TEST_F(SessionTest, CommandsPersistAcrossBusCycles) {
  const Mlp p = random_policy(5, 0.5);
  const auto log = run(RuntimeConfig{}, &p, 2.0, 9);
  ASSERT_GE(log.bus.size(), 200u);
  int checked = 0;
  for (std::size_t i = 0; i < log.bus.size(); ++i) {
    const auto& b = log.bus[i];
    if (b.source < 0) continue;
    ASSERT_LT(static_cast<std::size_t>(b.source), log.frames.size());
    EXPECT_EQ(b.p_des, log.frames[static_cast<std::size_t>(b.source)].target);
    if (i > 0 && log.bus[i - 1].source == b.source) {
      EXPECT_EQ(b.p_des, log.bus[i - 1].p_des);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST_F(SessionTest, TransmittedGainsAreExact) {
  const Mlp p = random_policy(6, 0.5);
  const auto log = run(RuntimeConfig{}, &p, 1.0, 10);
  for (const auto& b : log.bus)
    for (int j = 0; j < kNumJoints; ++j) {
      const bool calf = j % 3 == 2;
      ASSERT_EQ(b.kp[j], calf ? 30.0 : 50.0);
      ASSERT_EQ(b.kd[j], calf ? 0.2 : 2.0);
    }
  for (const auto& f : log.frames)
    for (int j = 0; j < kNumJoints; ++j) ASSERT_EQ(f.kp[j], j % 3 == 2 ? 30.0 : 50.0);
}

TEST_F(SessionTest, CommandAgeWithinMeasuredBand) {
  const auto log = run(RuntimeConfig{}, nullptr, 5.0, 11);
  const double cycle = 1.0 / 150.0;
  double lo = 1e9, hi = -1e9;
  int n = 0;
  for (const auto& f : log.frames) {
    if (f.command_effect < 0.0) continue;
    const double age = f.command_effect - f.time;
    lo = std::min(lo, age);
    hi = std::max(hi, age);
    ++n;
  }
  EXPECT_GT(n, 200);
  EXPECT_GE(lo, 0.02);
  EXPECT_LE(hi, 0.06 + cycle);
}

TEST_F(SessionTest, DelayFramesShiftTargets) {
  const Mlp p = random_policy(7, 0.5);
  RuntimeConfig cfg;
  cfg.bus.latency = LatencyModel::fixed(0.0);
  for (int delay : {0, 2}) {
    const auto log = run(cfg, &p, 1.0, 12, delay);
    ASSERT_EQ(log.header.delay_frames, delay);
    for (std::size_t i = 0; i < log.frames.size(); ++i) {
      ActVec applied = ActVec::Zero();
      if (i >= static_cast<std::size_t>(delay))
        for (int j = 0; j < kActDim; ++j) applied[j] = log.frames[i - static_cast<std::size_t>(delay)].action[j];
      EXPECT_EQ(log.frames[i].target, action_to_targets(applied, desc)) << "delay " << delay << " frame " << i;
    }
  }
}

TEST_F(SessionTest, TorqueCutEndsInFall) {
  Session s(desc, RuntimeConfig{}, flat);
  s.reset(spawn_state(s.plant(), *flat), 0, 1, 5.0);
  s.set_torque_cut(true);
  while (!s.done()) {
    s.observe(Vec3::Zero());
    s.act(ActVec::Zero());
  }
  EXPECT_EQ(s.termination(), Termination::Fall);
  EXPECT_LT(s.end_time(), 5.0);
  EXPECT_EQ(s.log().termination, Termination::Fall);
  EXPECT_THROW(s.act(ActVec::Zero()), Error);
}

TEST_F(SessionTest, ResetValidatesArguments) {
  Session s(desc, RuntimeConfig{}, flat);
  const auto init = spawn_state(s.plant(), *flat);
  EXPECT_THROW(s.reset(init, -1, 1, 1.0), ConfigError);
  EXPECT_THROW(s.reset(init, 9, 1, 1.0), ConfigError);
  EXPECT_THROW(s.reset(init, 0, 1, 0.0), ConfigError);
}

TEST_F(SessionTest, ScriptedSinusoidLagTracksLatency) {
  // Suspended robot, feed-forward velocity: lag is the channel latency plus a
  // few milliseconds of bus and step quantization.
  for (double latency : {0.0, 0.04}) {
    RuntimeConfig cfg;
    cfg.bus.latency = LatencyModel::fixed(latency);
    cfg.sim.base_fixed = true;
    cfg.sim.contact_enabled = false;
    Session s(desc, cfg, flat);
    SimState init = spawn_state(s.plant(), *flat);
    init.base_position.z() = 0.6;
    const JointArray pose = desc.default_pose;
    s.set_script([&](double t, JointArray& p, JointArray& v) {
      p = pose;
      v.fill(0.0);
      p[4] += 0.3 * std::sin(2 * kPi * t);
      v[4] = 0.3 * 2 * kPi * std::cos(2 * kPi * t);
    });
    const auto log = run_episode(s, nullptr, {}, init, 0, 4.0, 1);
    ASSERT_EQ(log.termination, Termination::Completed);
    // Find the peak of q and of the target in the last full period.
    double t_ref = 0.0, t_cur = 0.0, best_ref = -1e9, best_cur = -1e9;
    for (const auto& f : log.frames) {
      if (f.time < 3.0) continue;
      if (f.target[4] > best_ref) best_ref = f.target[4], t_ref = f.time;
      if (f.q[4] > best_cur) best_cur = f.q[4], t_cur = f.time;
    }
    EXPECT_NEAR(t_cur - t_ref, latency, 0.02 + 0.007) << "latency " << latency;
  }
}
