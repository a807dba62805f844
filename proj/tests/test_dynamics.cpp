#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mevius/dynamics.hpp"

using namespace mevius;

namespace {

// Per-link world kinematics by plain vector recursion (no spatial algebra).
struct LinkWorld {
  double mass;
  Vec3 com;
  Vec3 com_vel;
  Vec3 omega;
  Mat3 inertia_world;
};

std::vector<LinkWorld> link_world(const RobotDescription& d, const SimState& s) {
  std::vector<LinkWorld> out;
  const Mat3 r0 = s.base_orientation.toRotationMatrix();
  out.push_back({d.base_mass, s.base_position, s.base_lin_vel, s.base_ang_vel, r0 * d.base_inertia * r0.transpose()});
  for (int leg = 0; leg < kNumLegs; ++leg) {
    Mat3 r = r0;
    Vec3 p = s.base_position, v = s.base_lin_vel, w = s.base_ang_vel;
    for (int role = 0; role < 3; ++role) {
      const int j = leg * 3 + role;
      const Vec3 offset = r * d.joint_origin(j);
      const Vec3 axis_local = role == 0 ? Vec3::UnitX() : Vec3::UnitY();
      const Vec3 p_new = p + offset;
      v = v + w.cross(offset);
      r = r * (role == 0 ? rot_x(s.q[j]) : rot_y(s.q[j]));
      w = w + r * axis_local * s.qd[j];
      p = p_new;
      const LinkInertia li = d.link_inertia(j);
      const Vec3 c = r * li.com;
      out.push_back({li.mass, p + c, v + w.cross(c), w, r * li.inertia_com * r.transpose()});
    }
  }
  return out;
}

Vec3 angular_momentum(const RobotDescription& d, const SimState& s) {
  Vec3 l = Vec3::Zero();
  for (const auto& b : link_world(d, s)) l += b.mass * b.com.cross(b.com_vel) + b.inertia_world * b.omega;
  return l;
}

Vec3 linear_momentum(const RobotDescription& d, const SimState& s) {
  Vec3 p = Vec3::Zero();
  for (const auto& b : link_world(d, s)) p += b.mass * b.com_vel;
  return p;
}

double kinetic_energy(const RobotDescription& d, const SimState& s) {
  double e = 0.0;
  for (const auto& b : link_world(d, s)) e += 0.5 * b.mass * b.com_vel.squaredNorm() + 0.5 * b.omega.dot(b.inertia_world * b.omega);
  for (double qd : s.qd) e += 0.5 * d.reflected_rotor_inertia() * qd * qd;
  return e;
}

SimParams frictionless() {
  SimParams p;
  p.joint_damping = 0.0;
  p.joint_coulomb = 0.0;
  return p;
}

SimState random_state(Rng& rng) {
  SimState s;
  s.base_position = Vec3{rng.normal(), rng.normal(), rng.normal()};
  s.base_orientation = Quat(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
  s.base_lin_vel = Vec3{rng.normal(), rng.normal(), rng.normal()};
  s.base_ang_vel = Vec3{rng.normal(), rng.normal(), rng.normal()};
  for (int j = 0; j < kNumJoints; ++j) {
    s.q[j] = rng.uniform(-2.0, 2.0);
    s.qd[j] = 3.0 * rng.normal();
  }
  return s;
}

JointArray standing_torques(const RobotDescription& d, const SimState& s) {
  JointArray tau{};
  for (int j = 0; j < kNumJoints; ++j) {
    const bool calf = j % 3 == 2;
    const double kp = calf ? 30.0 : 50.0, kd = calf ? 0.2 : 2.0;
    tau[j] = clamp(kp * (d.default_pose[j] - s.q[j]) - kd * s.qd[j], -d.torque_limit, d.torque_limit);
  }
  return tau;
}

}  // namespace

TEST(Dynamics, FreeFallVelocity) {
  SimParams p;
  p.contact_enabled = false;
  const Dynamics dyn(default_description(), p);
  SimState s = dyn.standing_state();
  s.base_position.z() = 20.0;
  const JointArray zero{};
  for (int k = 0; k < 1000; ++k) s = dyn.step(s, zero, nullptr, 1e-3);
  EXPECT_NEAR(s.base_lin_vel.z(), -9.81, 1e-6);
  EXPECT_NEAR(s.base_lin_vel.x(), 0.0, 1e-9);
}

TEST(Dynamics, AngularMomentumConservedWithoutGravity) {
  SimParams p = frictionless();
  p.gravity.setZero();
  p.contact_enabled = false;
  const auto d = default_description();
  const Dynamics dyn(d, p);
  SimState s = dyn.standing_state();
  s.base_ang_vel = Vec3{0.8, -0.5, 1.5};
  s.base_lin_vel = Vec3{0.3, 0.1, -0.2};
  for (int j = 0; j < kNumJoints; ++j) s.qd[j] = 0.5 * std::sin(1.0 + j);
  const Vec3 l0 = angular_momentum(d, s);
  const Vec3 p0 = linear_momentum(d, s);
  const JointArray zero{};
  for (int k = 0; k < 1000; ++k) s = dyn.step(s, zero, nullptr, 1e-3);
  EXPECT_LT((angular_momentum(d, s) - l0).norm(), 1e-3 * l0.norm());
  EXPECT_LT((linear_momentum(d, s) - p0).norm(), 1e-3 * p0.norm());
}

TEST(Dynamics, PassiveChainEnergyDrift) {
  SimParams p = frictionless();
  p.gravity.setZero();
  p.contact_enabled = false;
  const auto d = default_description();
  const Dynamics dyn(d, p);
  SimState s = dyn.standing_state();
  s.base_ang_vel = Vec3{0.2, 0.4, -0.3};
  for (int j = 0; j < kNumJoints; ++j) s.qd[j] = 2.0 * std::cos(0.7 * j);
  const double e0 = kinetic_energy(d, s);
  EXPECT_NEAR(dyn.mechanical_energy(s), e0, 1e-9 * e0);
  const JointArray zero{};
  for (int k = 0; k < 1000; ++k) {
    s = dyn.step(s, zero, nullptr, 1e-3);
    ASSERT_LT(std::abs(kinetic_energy(d, s) - e0), 0.01 * e0) << "step " << k;
  }
}

TEST(Dynamics, PassiveChainEnergyDriftUnderGravity) {
  SimParams p = frictionless();
  p.contact_enabled = false;
  const auto d = default_description();
  const Dynamics dyn(d, p);
  SimState s = dyn.standing_state();
  for (int j = 0; j < kNumJoints; ++j) s.qd[j] = 1.5 * std::sin(0.3 + j);
  // Energy measured relative to the lowest point the free-falling base
  // reaches, so the reference does not dominate.
  const double e0 = dyn.mechanical_energy(s) + d.total_mass * kGravity * 0.5 * kGravity;
  const JointArray zero{};
  for (int k = 0; k < 1000; ++k) s = dyn.step(s, zero, nullptr, 1e-3);
  const double e1 = dyn.mechanical_energy(s) + d.total_mass * kGravity * 0.5 * kGravity;
  EXPECT_LT(std::abs(e1 - e0), 0.01 * e0);
}

TEST(Dynamics, RigidDropSettlesToWeight) {
  SimParams p;
  p.joints_locked = true;
  const auto d = default_description();
  const Dynamics dyn(d, p);
  const Terrain flat = flat_terrain();
  SimState s = dyn.standing_state(0.1);
  StepInfo info;
  const JointArray zero{};
  for (int k = 0; k < 3000; ++k) s = dyn.step(s, zero, &flat, 1e-3, &info);
  double fz = 0.0;
  for (const auto& f : info.contact_forces) fz += f.z();
  EXPECT_NEAR(fz, 152.1, 0.02 * 152.1);
  EXPECT_NEAR(fz, d.total_mass * kGravity, 1e-3 * fz);
  for (int j = 0; j < kNumJoints; ++j) EXPECT_EQ(s.q[j], d.default_pose[j]);
  for (bool c : s.contact_flags) EXPECT_TRUE(c);
}

TEST(Dynamics, ArticulatedBodyMatchesMassMatrix) {
  SimParams p = frictionless();
  p.contact_enabled = false;
  const Dynamics dyn(default_description(), p);
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const SimState s = random_state(rng);
    JointArray tau;
    for (double& x : tau) x = 5.0 * rng.normal();
    const VecN aba = dyn.articulated_body_accelerations(s, tau);
    const MatN m = dyn.mass_matrix(s);
    VecN rhs = -dyn.bias_forces(s);
    for (int j = 0; j < kNumJoints; ++j) rhs[6 + j] += tau[j];
    const VecN crba = m.ldlt().solve(rhs);
    EXPECT_LT((aba - crba).norm(), 1e-10 * (1.0 + aba.norm()));
    EXPECT_LT((m - m.transpose()).norm(), 1e-12);
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<MatN>(m).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Dynamics, MassMatrixKineticEnergyMatchesOracle) {
  const auto d = default_description();
  const Dynamics dyn(d);
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const SimState s = random_state(rng);
    const VecN nu = Dynamics::generalized_velocity(s);
    EXPECT_NEAR(0.5 * nu.dot(dyn.mass_matrix(s) * nu), kinetic_energy(d, s), 1e-9 * kinetic_energy(d, s));
  }
}

TEST(Dynamics, FootJacobianMatchesFootVelocity) {
  const auto d = default_description();
  const Dynamics dyn(d);
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    const SimState s = random_state(rng);
    const auto v = foot_velocities(d, s);
    const VecN nu = Dynamics::generalized_velocity(s);
    for (int leg = 0; leg < kNumLegs; ++leg)
      EXPECT_LT((dyn.foot_jacobian(s, leg) * nu - v[leg]).norm(), 1e-12 * (1.0 + v[leg].norm()));
  }
}

TEST(Dynamics, DeterministicBitIdentical) {
  const auto d = default_description();
  const Dynamics dyn(d);
  const Terrain flat = flat_terrain();
  SimState a = dyn.standing_state(0.02), b = a;
  for (int k = 0; k < 500; ++k) {
    a = dyn.step(a, standing_torques(d, a), &flat, 1e-3);
    b = dyn.step(b, standing_torques(d, b), &flat, 1e-3);
  }
  EXPECT_EQ(std::memcmp(a.base_position.data(), b.base_position.data(), sizeof(double) * 3), 0);
  EXPECT_EQ(std::memcmp(a.base_orientation.coeffs().data(), b.base_orientation.coeffs().data(), sizeof(double) * 4), 0);
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.qd, b.qd);
}

TEST(Dynamics, TimeAndOrientationInvariants) {
  const auto d = default_description();
  const Dynamics dyn(d);
  const Terrain flat = flat_terrain();
  SimState s = dyn.standing_state(0.05);
  s.base_ang_vel = Vec3{0.5, -0.3, 0.7};
  for (int k = 0; k < 200; ++k) {
    const SimState n = dyn.step(s, standing_torques(d, s), &flat, 1e-3);
    EXPECT_EQ(n.time, s.time + 1e-3);
    EXPECT_NEAR(n.base_orientation.norm(), 1.0, 1e-9);
    s = n;
  }
}

TEST(Dynamics, NonFiniteTorqueFaults) {
  const auto d = default_description();
  const Dynamics dyn(d);
  SimState s = dyn.standing_state(0.1);
  JointArray tau{};
  tau[4] = std::nan("");
  try {
    dyn.step(s, tau, nullptr, 1e-3);
    FAIL() << "expected a fault";
  } catch (const SimulationFault& f) {
    EXPECT_FALSE(f.quantity.empty());
  }
  s.base_position.x() = std::numeric_limits<double>::infinity();
  try {
    dyn.step(s, JointArray{}, nullptr, 1e-3);
    FAIL() << "expected a fault";
  } catch (const SimulationFault& f) {
    EXPECT_EQ(f.quantity, "base_position");
  }
}

TEST(Dynamics, RejectsBadStepSize) {
  const Dynamics dyn(default_description());
  const SimState s = dyn.standing_state();
  EXPECT_THROW(dyn.step(s, JointArray{}, nullptr, 0.0), ConfigError);
  EXPECT_THROW(dyn.step(s, JointArray{}, nullptr, 6e-3), ConfigError);
}

TEST(Dynamics, QuietStandingKeepsAllContacts) {
  const auto d = default_description();
  const Dynamics dyn(d);
  const Terrain flat = flat_terrain();
  SimState s = dyn.standing_state();
  const double z0 = s.base_position.z();
  StepInfo info;
  for (int k = 0; k < 5000; ++k) {
    s = dyn.step(s, standing_torques(d, s), &flat, 1e-3, &info);
    if (k >= 20) {
      for (int leg = 0; leg < kNumLegs; ++leg) ASSERT_TRUE(s.contact_flags[leg]) << "leg " << leg << " step " << k;
    }
  }
  EXPECT_NEAR(s.base_position.z(), z0, 0.1 * z0);
}

TEST(Dynamics, ContactLawHoldsEveryStep) {
  const auto d = default_description();
  const Dynamics dyn(d);
  TerrainParams tp;
  tp.roughness = 0.04;
  const Terrain rough = sample_terrain(TerrainKind::Rough, tp, 5);
  SimState s = dyn.standing_state(0.05);
  Rng rng(3);
  StepInfo info;
  int loaded = 0;
  for (int k = 0; k < 2000; ++k) {
    JointArray tau = standing_torques(d, s);
    for (double& t : tau) t = clamp(t + 3.0 * rng.normal(), -25.0, 25.0);
    const auto feet = forward_kinematics(d, s.q, s.pose());
    s = dyn.step(s, tau, &rough, 1e-3, &info);
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const Vec3& f = info.contact_forces[leg];
      const Vec3 n = rough.normal(feet[leg].x(), feet[leg].y());
      const double fn = f.dot(n);
      const double ft = (f - fn * n).norm();
      ASSERT_GE(fn, 0.0);
      ASSERT_LE(ft, rough.friction * fn * (1.0 + 1e-12) + 1e-12);
      loaded += fn > 0.0;
    }
  }
  EXPECT_GT(loaded, 4000);
}

// ---------------------------------------------------------------------------
// contact_forces

namespace {

SimState foot_state(const RobotDescription& d, double foot_height, const Vec3& base_vel = Vec3::Zero()) {
  SimState s;
  s.q = d.default_pose;
  const auto feet = forward_kinematics(d, s.q, Pose{});
  s.base_position = Vec3{0.0, 0.0, -feet[0].z() + foot_height};
  s.base_lin_vel = base_vel;
  return s;
}

}  // namespace

TEST(ContactForces, FootAboveGroundIsFree) {
  const auto d = default_description();
  const auto f = contact_forces(foot_state(d, 1e-3), d, flat_terrain());
  for (const auto& v : f) EXPECT_EQ(v, Vec3::Zero());
}

TEST(ContactForces, StaticPenetrationSpringLaw) {
  const auto d = default_description();
  const auto f = contact_forces(foot_state(d, -1e-3), d, flat_terrain());
  for (const auto& v : f) {
    EXPECT_NEAR(v.z(), 30.0, 1e-9);
    EXPECT_NEAR(v.head<2>().norm(), 0.0, 1e-12);
  }
}

TEST(ContactForces, DampingOnlyWhileCompressing) {
  const auto d = default_description();
  const SimParams p;
  const auto down = contact_forces(foot_state(d, -1e-3, Vec3{0, 0, -0.01}), d, flat_terrain(), p);
  EXPECT_NEAR(down[0].z(), 30.0 + 10.0, 1e-9);
  const auto up = contact_forces(foot_state(d, -1e-3, Vec3{0, 0, 0.5}), d, flat_terrain(), p);
  EXPECT_NEAR(up[0].z(), 30.0, 1e-9);
}

TEST(ContactForces, FrictionSaturatesAboveRegularizationVelocity) {
  const auto d = default_description();
  Terrain t = flat_terrain();
  t.friction = 0.8;
  const SimParams p;
  for (double speed : {0.051, 0.1, 0.5, 3.0}) {
    const auto f = contact_forces(foot_state(d, -2e-3, Vec3{speed, 0, 0}), d, t, p);
    for (const auto& v : f) {
      EXPECT_NEAR(v.z(), 60.0, 1e-9);
      EXPECT_NEAR(v.head<2>().norm(), 0.8 * 60.0, 1e-9);
      EXPECT_LT(v.x(), 0.0);
    }
  }
  // Below the regularization velocity the friction is proportionally smaller.
  const auto slow = contact_forces(foot_state(d, -2e-3, Vec3{0.025, 0, 0}), d, t, p);
  EXPECT_NEAR(slow[0].x(), -0.5 * 0.8 * 60.0, 1e-9);
}

TEST(ContactForces, SlopeNormalFollowsTerrain) {
  const auto d = default_description();
  TerrainParams tp;
  tp.slope_deg = 10.0;
  tp.resolution = 0.05;
  const Terrain slope = sample_terrain(TerrainKind::Slope, tp, 0);
  const Vec3 n = slope.normal(0.3, 0.0);
  const double a = 10.0 * std::numbers::pi / 180.0;
  EXPECT_NEAR(n.x(), -std::sin(a), 1e-9);
  EXPECT_NEAR(n.z(), std::cos(a), 1e-9);
}

// ---------------------------------------------------------------------------
// Terrain

TEST(Terrain, FlatIsZero) {
  const Terrain t = sample_terrain(TerrainKind::Flat, TerrainParams{}, 9);
  for (double h : t.heights) EXPECT_EQ(h, 0.0);
  EXPECT_EQ(t.height(1.234, -0.5), 0.0);
}

TEST(Terrain, SlopeMatchesPlane) {
  TerrainParams p;
  p.slope_deg = 5.0;
  const Terrain t = sample_terrain(TerrainKind::Slope, p, 0);
  const double k = std::tan(5.0 * std::numbers::pi / 180.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-3.0, 15.0), y = rng.uniform(-3.0, 3.0);
    EXPECT_NEAR(t.height(x, y), x * k, 1e-9);
  }
}

TEST(Terrain, StepsRiseByStepHeight) {
  TerrainParams p;
  p.step_height = 0.05;
  p.step_period = 0.4;
  p.step_start = 1.0;
  const Terrain t = sample_terrain(TerrainKind::Steps, p, 0);
  EXPECT_EQ(t.height(0.5, 0.0), 0.0);
  EXPECT_NEAR(t.height(1.1, 0.0), 0.05, 1e-12);
  EXPECT_NEAR(t.height(1.55, 0.0), 0.10, 1e-12);
}

TEST(Terrain, RoughDeterministicPerSeed) {
  TerrainParams p;
  p.roughness = 0.05;
  const Terrain a = sample_terrain(TerrainKind::Rough, p, 42);
  const Terrain b = sample_terrain(TerrainKind::Rough, p, 42);
  const Terrain c = sample_terrain(TerrainKind::Rough, p, 43);
  EXPECT_EQ(a.heights, b.heights);
  EXPECT_NE(a.heights, c.heights);
  double lo = 0.0, hi = 0.0;
  for (double h : a.heights) {
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  EXPECT_LE(hi - lo, 0.05 + 1e-12);
  EXPECT_GT(hi - lo, 0.03);
}

TEST(Terrain, InvalidParamsRejected) {
  TerrainParams p;
  p.step_height = -0.01;
  EXPECT_THROW(sample_terrain(TerrainKind::Steps, p, 0), ConfigError);
  TerrainParams q;
  q.friction = -1.0;
  EXPECT_THROW(sample_terrain(TerrainKind::Flat, q, 0), ConfigError);
}

TEST(Terrain, BinaryRoundTrip) {
  TerrainParams p;
  p.resolution = 0.1;
  const Terrain a = sample_terrain(TerrainKind::Rough, p, 7);
  std::stringstream ss;
  write_terrain(ss, a);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 8), "MVTERR01");
  EXPECT_EQ(bytes.size(), 8u + 12u + 40u + 8u * a.heights.size());
  std::stringstream in(bytes);
  const Terrain b = read_terrain(in);
  EXPECT_EQ(b.kind, a.kind);
  EXPECT_EQ(b.nx, a.nx);
  EXPECT_EQ(b.ny, a.ny);
  EXPECT_EQ(b.resolution, a.resolution);
  EXPECT_EQ(b.heights, a.heights);
}

TEST(Terrain, BinaryLittleEndianHeader) {
  Terrain t = sample_terrain(TerrainKind::Flat, TerrainParams{.resolution = 0.5}, 0);
  std::stringstream ss;
  write_terrain(ss, t);
  const std::string bytes = ss.str();
  // nx = 41 at offset 12.
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 41);
  EXPECT_EQ(bytes[13], 0);
  // resolution 0.5 = 0x3FE0000000000000, little endian at offset 20.
  EXPECT_EQ(static_cast<unsigned char>(bytes[27]), 0x3F);
  EXPECT_EQ(static_cast<unsigned char>(bytes[26]), 0xE0);
}

TEST(Terrain, TruncatedFileRejected) {
  std::stringstream ss;
  write_terrain(ss, flat_terrain());
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream in(bytes);
  EXPECT_THROW(read_terrain(in), FormatError);
  std::stringstream junk("not a terrain");
  EXPECT_THROW(read_terrain(junk), FormatError);
}
