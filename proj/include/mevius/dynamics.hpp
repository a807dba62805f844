#pragma once

// Floating-base articulated-body dynamics with penalty point-foot contact.
// Spatial vectors are [angular; linear].

#include <array>
#include <string>

#include "mevius/common.hpp"
#include "mevius/robot_model.hpp"
#include "mevius/terrain.hpp"

namespace mevius {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

namespace spatial {

inline Mat6 crm(const Vec6& v) {
  Mat6 m = Mat6::Zero();
  const Mat3 w = skew(v.head<3>());
  m.topLeftCorner<3, 3>() = w;
  m.bottomRightCorner<3, 3>() = w;
  m.bottomLeftCorner<3, 3>() = skew(v.tail<3>());
  return m;
}

inline Vec6 crm_mul(const Vec6& v, const Vec6& x) {
  Vec6 out;
  out.head<3>() = v.head<3>().cross(x.head<3>());
  out.tail<3>() = v.head<3>().cross(x.tail<3>()) + v.tail<3>().cross(x.head<3>());
  return out;
}

inline Vec6 crf_mul(const Vec6& v, const Vec6& f) {
  Vec6 out;
  out.head<3>() = v.head<3>().cross(f.head<3>()) + v.tail<3>().cross(f.tail<3>());
  out.tail<3>() = v.head<3>().cross(f.tail<3>());
  return out;
}

/// Rigid-body inertia about the frame origin.
inline Mat6 inertia(double m, const Vec3& c, const Mat3& ic) {
  Mat6 out;
  const Mat3 cx = skew(c);
  out.topLeftCorner<3, 3>() = ic + m * cx * cx.transpose();
  out.topRightCorner<3, 3>() = m * cx;
  out.bottomLeftCorner<3, 3>() = m * cx.transpose();
  out.bottomRightCorner<3, 3>() = m * Mat3::Identity();
  return out;
}

/// Motion transform from parent to child coordinates. `e` maps parent axes to
/// child axes, `r` is the child origin in parent coordinates.
struct Transform {
  Mat3 e = Mat3::Identity();
  Vec3 r = Vec3::Zero();

  Vec6 apply(const Vec6& v) const {
    Vec6 out;
    out.head<3>() = e * v.head<3>();
    out.tail<3>() = e * (v.tail<3>() - r.cross(v.head<3>()));
    return out;
  }
  /// Child force to parent coordinates.
  Vec6 apply_transpose_force(const Vec6& f) const {
    Vec6 out;
    const Vec3 n = e.transpose() * f.head<3>();
    const Vec3 lin = e.transpose() * f.tail<3>();
    out.head<3>() = n + r.cross(lin);
    out.tail<3>() = lin;
    return out;
  }
  Mat6 matrix() const {
    Mat6 x = Mat6::Zero();
    x.topLeftCorner<3, 3>() = e;
    x.bottomRightCorner<3, 3>() = e;
    x.bottomLeftCorner<3, 3>() = -e * skew(r);
    return x;
  }
};

}  // namespace spatial

struct SimParams {
  Vec3 gravity{0.0, 0.0, -kGravity};
  double contact_stiffness = 3e4;
  double contact_damping = 1e3;
  double friction_velocity = 0.05;
  double joint_damping = 0.01;
  double joint_coulomb = 0.1;
  /// Velocity scale of the smooth Coulomb term, tanh(qd / coulomb_velocity).
  double coulomb_velocity = 0.01;
  bool contact_enabled = true;
  bool include_rotor_inertia = true;
  /// Treats every joint as welded at its current angle.
  bool joints_locked = false;
  /// Holds the base still (test rig); only the joints move.
  bool base_fixed = false;

  void validate() const {
    if (!(contact_stiffness >= 0.0)) throw ConfigError("sim.contact_stiffness: must be non-negative");
    if (!(contact_damping >= 0.0)) throw ConfigError("sim.contact_damping: must be non-negative");
    if (!(friction_velocity > 0.0)) throw ConfigError("sim.friction_velocity: must be positive");
    if (!(joint_damping >= 0.0) || !(joint_coulomb >= 0.0)) throw ConfigError("sim: joint friction must be non-negative");
    if (!(coulomb_velocity > 0.0)) throw ConfigError("sim.coulomb_velocity: must be positive");
    if (!gravity.allFinite()) throw ConfigError("sim.gravity: must be finite");
  }
};

struct SimState {
  Vec3 base_position = Vec3::Zero();
  Quat base_orientation = Quat::Identity();
  /// World-frame base velocities.
  Vec3 base_lin_vel = Vec3::Zero();
  Vec3 base_ang_vel = Vec3::Zero();
  JointArray q{};
  JointArray qd{};
  std::array<bool, kNumLegs> contact_flags{};
  double time = 0.0;

  Pose pose() const { return Pose{base_position, base_orientation}; }
};

using FootForces = std::array<Vec3, kNumLegs>;

inline FootForces zero_forces() {
  FootForces f;
  for (auto& v : f) v.setZero();
  return f;
}

/// Per-foot penalty contact given foot positions and velocities in world
/// frame. When `dfdv` is given it receives, per foot, the symmetric part of
/// the force derivative with respect to foot velocity (negative semidefinite).
inline FootForces contact_forces_at(const std::array<Vec3, kNumLegs>& pos, const std::array<Vec3, kNumLegs>& vel,
                                    const Terrain& terrain, const SimParams& p,
                                    std::array<bool, kNumLegs>* in_contact = nullptr,
                                    std::array<Mat3, kNumLegs>* dfdv = nullptr) {
  FootForces out;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    out[leg].setZero();
    if (in_contact) (*in_contact)[leg] = false;
    if (dfdv) (*dfdv)[leg].setZero();
    const Vec3& x = pos[leg];
    const double h = terrain.height(x.x(), x.y());
    const Vec3 n = terrain.normal(x.x(), x.y());
    const double depth = (h - x.z()) * n.z();
    if (!(depth > 0.0)) continue;
    const double vn = vel[leg].dot(n);
    // Damping resists compression only, so the contact never pulls.
    const double fn = std::max(0.0, p.contact_stiffness * depth + p.contact_damping * std::max(0.0, -vn));
    const Vec3 vt = vel[leg] - vn * n;
    const double speed = vt.norm();
    const double mu = terrain.friction;
    const Vec3 ft = -mu * fn * vt / std::max(speed, p.friction_velocity);
    out[leg] = fn * n + ft;
    if (in_contact) (*in_contact)[leg] = fn > 0.0;
    if (dfdv) {
      const Mat3 tangent = Mat3::Identity() - n * n.transpose();
      Mat3 d = Mat3::Zero();
      if (vn < 0.0) d -= p.contact_damping * n * n.transpose();
      if (speed < p.friction_velocity) {
        d -= mu * fn / p.friction_velocity * tangent;
      } else {
        const Vec3 t = vt / speed;
        d -= mu * fn / speed * (tangent - t * t.transpose());
      }
      (*dfdv)[leg] = d;
    }
  }
  return out;
}

/// World-frame foot velocities from the base twist and joint rates.
inline std::array<Vec3, kNumLegs> foot_velocities(const RobotDescription& d, const SimState& s) {
  std::array<Vec3, kNumLegs> v;
  const Mat3 r = s.base_orientation.toRotationMatrix();
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const LegAngles q = leg_angles(s.q, leg);
    const Vec3 local = d.hip_offsets[leg] + leg_forward_kinematics(d, q, leg_side(leg));
    const Vec3 qd{s.qd[leg * 3], s.qd[leg * 3 + 1], s.qd[leg * 3 + 2]};
    v[leg] = s.base_lin_vel + s.base_ang_vel.cross(r * local) + r * (leg_jacobian(d, q, leg_side(leg)) * qd);
  }
  return v;
}

inline FootForces contact_forces(const SimState& s, const RobotDescription& d, const Terrain& terrain,
                                 const SimParams& p = {}) {
  return contact_forces_at(forward_kinematics(d, s.q, s.pose()), foot_velocities(d, s), terrain, p);
}

struct StepInfo {
  /// Contact law evaluated at the start of the step.
  FootForces contact_forces = zero_forces();
  JointArray qdd{};
};

/// Generalized velocity layout: base twist in base coordinates
/// [omega; v] (6), then the 12 joint rates.
inline constexpr int kDofs = 6 + kNumJoints;
using VecN = Eigen::Matrix<double, kDofs, 1>;
using MatN = Eigen::Matrix<double, kDofs, kDofs>;
using FootJacobian = Eigen::Matrix<double, 3, kDofs>;

/// The plant: a 13-body tree (base plus three links per leg).
class Dynamics {
 public:
  static constexpr int kBodies = kNumJoints + 1;

  explicit Dynamics(RobotDescription desc, SimParams params = {}) : desc_(std::move(desc)), params_(params) {
    validate(desc_);
    params_.validate();
    inertia_[0] = spatial::inertia(desc_.base_mass, Vec3::Zero(), desc_.base_inertia);
    mass_[0] = desc_.base_mass;
    com_[0].setZero();
    for (int j = 0; j < kNumJoints; ++j) {
      const int b = j + 1;
      parent_[b] = (j % 3 == 0) ? 0 : b - 1;
      origin_[b] = desc_.joint_origin(j);
      axis_[b] = (j % 3 == 0) ? 0 : 1;
      const LinkInertia li = desc_.link_inertia(j);
      inertia_[b] = spatial::inertia(li.mass, li.com, li.inertia_com);
      mass_[b] = li.mass;
      com_[b] = li.com;
    }
    armature_ = params_.include_rotor_inertia ? desc_.reflected_rotor_inertia() : 0.0;
    foot_ = Vec3{0.0, 0.0, -desc_.calf_length};
  }

  const RobotDescription& description() const { return desc_; }
  const SimParams& params() const { return params_; }
  double armature() const { return armature_; }

  /// Standing spawn: default pose, feet resting on flat ground at z = 0.
  SimState standing_state(double clearance = 0.0) const {
    SimState s;
    s.q = desc_.default_pose;
    double lowest = 0.0;
    for (const auto& f : forward_kinematics(desc_, s.q, Pose{})) lowest = std::min(lowest, f.z());
    s.base_position = Vec3{0.0, 0.0, -lowest + clearance};
    return s;
  }

  /// Semi-implicit Euler step. Velocity-dependent contact and joint friction
  /// terms are linearized about the current state and solved implicitly.
  SimState step(const SimState& s_in, const JointArray& torques, const Terrain* terrain, double dt,
                StepInfo* info = nullptr) const {
    if (!(dt > 0.0 && dt <= 5e-3)) throw ConfigError("step: dt must lie in (0, 5e-3]");
    SimState s = s_in;
    const bool locked = params_.joints_locked;
    if (locked) s.qd.fill(0.0);
    if (params_.base_fixed) {
      s.base_lin_vel.setZero();
      s.base_ang_vel.setZero();
    }
    const Kin k = kinematics(s);

    FootForces forces = zero_forces();
    std::array<bool, kNumLegs> contact{};
    std::array<Mat3, kNumLegs> dfdv;
    if (terrain && params_.contact_enabled)
      forces = contact_forces_at(k.foot_pos, k.foot_vel, *terrain, params_, &contact, &dfdv);

    MatN a = mass_matrix(k);
    VecN rhs = -bias_forces(k);
    for (int j = 0; j < kNumJoints; ++j) {
      const double qd = s.qd[j];
      const double th = std::tanh(qd / params_.coulomb_velocity);
      rhs[6 + j] += torques[j] - params_.joint_damping * qd - params_.joint_coulomb * th;
      a(6 + j, 6 + j) += dt * (params_.joint_damping + params_.joint_coulomb / params_.coulomb_velocity * (1.0 - th * th));
    }
    for (int leg = 0; leg < kNumLegs; ++leg) {
      if (forces[leg].isZero(0.0) && !contact[leg]) continue;
      const FootJacobian jac = foot_jacobian(k, leg);
      rhs += jac.transpose() * forces[leg];
      a -= dt * jac.transpose() * dfdv[leg] * jac;
    }

    VecN acc = VecN::Zero();
    if (locked && params_.base_fixed) {
    } else if (locked) {
      acc.head<6>() = a.topLeftCorner<6, 6>().ldlt().solve(rhs.head<6>());
    } else if (params_.base_fixed) {
      acc.tail<kNumJoints>() =
          a.bottomRightCorner<kNumJoints, kNumJoints>().ldlt().solve(rhs.tail<kNumJoints>());
    } else {
      acc = a.ldlt().solve(rhs);
    }

    SimState n = s;
    const Mat3& r0 = k.rot[0];
    const Vec3 w_b = k.v[0].head<3>();
    const Vec3 v_b = k.v[0].tail<3>();
    const Vec3 wdot_w = r0 * acc.head<3>();
    const Vec3 vdot_w = r0 * (acc.segment<3>(3) + w_b.cross(v_b));
    n.base_ang_vel = s.base_ang_vel + dt * wdot_w;
    n.base_lin_vel = s.base_lin_vel + dt * vdot_w;
    n.base_position = s.base_position + dt * n.base_lin_vel;
    const Vec3 dtheta = dt * n.base_ang_vel;
    const double angle = dtheta.norm();
    Quat dq = Quat::Identity();
    if (angle > 0.0) dq = Quat(Eigen::AngleAxisd(angle, dtheta / angle));
    n.base_orientation = (dq * s.base_orientation).normalized();
    JointArray qdd{};
    for (int j = 0; j < kNumJoints; ++j) {
      qdd[j] = acc[6 + j];
      n.qd[j] = s.qd[j] + dt * qdd[j];
      n.q[j] = s.q[j] + dt * n.qd[j];
    }
    n.contact_flags = contact;
    n.time = s.time + dt;
    check_finite(n);
    if (info) {
      info->contact_forces = forces;
      info->qdd = qdd;
    }
    return n;
  }

  /// Joint-space mass matrix including reflected rotor inertia.
  MatN mass_matrix(const SimState& s) const { return mass_matrix(kinematics(s)); }
  /// Coriolis, centrifugal and gravity terms: M * acc + h = applied forces.
  VecN bias_forces(const SimState& s) const { return bias_forces(kinematics(s)); }
  /// Maps the generalized velocity to the world-frame foot velocity.
  FootJacobian foot_jacobian(const SimState& s, int leg) const { return foot_jacobian(kinematics(s), leg); }

  /// Generalized velocity of a state (base twist in base coordinates).
  static VecN generalized_velocity(const SimState& s) {
    VecN nu;
    const Mat3 r = s.base_orientation.toRotationMatrix();
    nu.head<3>() = r.transpose() * s.base_ang_vel;
    nu.segment<3>(3) = r.transpose() * s.base_lin_vel;
    for (int j = 0; j < kNumJoints; ++j) nu[6 + j] = s.qd[j];
    return nu;
  }

  /// Articulated-body forward dynamics without contact or joint friction.
  /// Returns base spatial acceleration (base coordinates) and joint
  /// accelerations in the same layout as the generalized velocity.
  VecN articulated_body_accelerations(const SimState& s, const JointArray& tau) const {
    const Kin k = kinematics(s);
    std::array<Mat6, kBodies> ia;
    std::array<Vec6, kBodies> pa, c, u_vec;
    std::array<double, kBodies> d_inv{}, u{};
    for (int b = 0; b < kBodies; ++b) {
      ia[b] = inertia_[b];
      pa[b] = spatial::crf_mul(k.v[b], inertia_[b] * k.v[b]) - gravity_force(k, b);
      c[b].setZero();
      if (b > 0) c[b] = spatial::crm_mul(k.v[b], motion_axis(b) * s.qd[b - 1]);
    }
    for (int b = kBodies - 1; b >= 1; --b) {
      const int p = parent_[b];
      u_vec[b] = ia[b].col(axis_[b]);
      d_inv[b] = 1.0 / (u_vec[b][axis_[b]] + armature_);
      u[b] = tau[b - 1] - pa[b][axis_[b]];
      const Mat6 i_par = ia[b] - u_vec[b] * u_vec[b].transpose() * d_inv[b];
      const Vec6 p_par = pa[b] + i_par * c[b] + u_vec[b] * (u[b] * d_inv[b]);
      ia[p] += k.xm[b].transpose() * i_par * k.xm[b];
      pa[p] += k.x[b].apply_transpose_force(p_par);
    }
    VecN out;
    std::array<Vec6, kBodies> acc;
    acc[0] = -ia[0].ldlt().solve(pa[0]);
    out.head<6>() = acc[0];
    for (int b = 1; b < kBodies; ++b) {
      acc[b] = k.x[b].apply(acc[parent_[b]]) + c[b];
      const double qdd = (u[b] - u_vec[b].dot(acc[b])) * d_inv[b];
      acc[b][axis_[b]] += qdd;
      out[5 + b] = qdd;
    }
    return out;
  }

  /// Kinetic plus gravitational potential energy, including rotor kinetic energy.
  double mechanical_energy(const SimState& s) const {
    const Kin k = kinematics(s);
    double e = 0.0;
    for (int b = 0; b < kBodies; ++b) {
      e += 0.5 * k.v[b].dot(inertia_[b] * k.v[b]);
      e -= mass_[b] * params_.gravity.dot(k.pos[b] + k.rot[b] * com_[b]);
    }
    for (int j = 0; j < kNumJoints; ++j) e += 0.5 * armature_ * s.qd[j] * s.qd[j];
    return e;
  }

  double total_mass() const {
    double m = 0.0;
    for (double x : mass_) m += x;
    return m;
  }

 private:
  struct Kin {
    std::array<Mat3, kBodies> rot;              // body axes in world
    std::array<Vec3, kBodies> pos;              // body origin in world
    std::array<Vec6, kBodies> v;                // body velocity in body coordinates
    std::array<spatial::Transform, kBodies> x;  // parent -> body
    std::array<Mat6, kBodies> xm;
    std::array<Vec3, kNumLegs> foot_pos;
    std::array<Vec3, kNumLegs> foot_vel;
  };

  Vec6 motion_axis(int b) const {
    Vec6 s = Vec6::Zero();
    s[axis_[b]] = 1.0;
    return s;
  }

  Vec6 gravity_force(const Kin& k, int b) const {
    const Vec3 g = mass_[b] * (k.rot[b].transpose() * params_.gravity);
    Vec6 f;
    f.head<3>() = com_[b].cross(g);
    f.tail<3>() = g;
    return f;
  }

  Kin kinematics(const SimState& s) const {
    Kin k;
    k.rot[0] = s.base_orientation.toRotationMatrix();
    k.pos[0] = s.base_position;
    k.v[0].head<3>() = k.rot[0].transpose() * s.base_ang_vel;
    k.v[0].tail<3>() = k.rot[0].transpose() * s.base_lin_vel;
    k.xm[0].setIdentity();
    for (int b = 1; b < kBodies; ++b) {
      const int j = b - 1, p = parent_[b];
      const Mat3 rj = axis_[b] == 0 ? rot_x(s.q[j]) : rot_y(s.q[j]);
      k.x[b].e = rj.transpose();
      k.x[b].r = origin_[b];
      k.xm[b] = k.x[b].matrix();
      k.rot[b] = k.rot[p] * rj;
      k.pos[b] = k.pos[p] + k.rot[p] * origin_[b];
      k.v[b] = k.x[b].apply(k.v[p]);
      k.v[b][axis_[b]] += s.qd[j];
    }
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const int b = leg * 3 + 3;
      k.foot_pos[leg] = k.pos[b] + k.rot[b] * foot_;
      const Vec3 w = k.v[b].head<3>(), vo = k.v[b].tail<3>();
      k.foot_vel[leg] = k.rot[b] * (vo + w.cross(foot_));
    }
    return k;
  }

  MatN mass_matrix(const Kin& k) const {
    std::array<Mat6, kBodies> ic = inertia_;
    for (int b = kBodies - 1; b >= 1; --b) ic[parent_[b]] += k.xm[b].transpose() * ic[b] * k.xm[b];
    MatN m = MatN::Zero();
    m.topLeftCorner<6, 6>() = ic[0];
    for (int b = 1; b < kBodies; ++b) {
      const int j = 6 + b - 1;
      Vec6 f = ic[b].col(axis_[b]);
      m(j, j) = f[axis_[b]] + armature_;
      int i = b;
      while (true) {
        f = k.xm[i].transpose() * f;
        i = parent_[i];
        if (i == 0) {
          m.block<6, 1>(0, j) = f;
          m.block<1, 6>(j, 0) = f.transpose();
          break;
        }
        m(6 + i - 1, j) = m(j, 6 + i - 1) = f[axis_[i]];
      }
    }
    return m;
  }

  VecN bias_forces(const Kin& k) const {
    std::array<Vec6, kBodies> a, f;
    a[0].setZero();
    f[0] = spatial::crf_mul(k.v[0], inertia_[0] * k.v[0]) - gravity_force(k, 0);
    for (int b = 1; b < kBodies; ++b) {
      const Vec6 vj = motion_axis(b) * (k.v[b][axis_[b]] - k.x[b].apply(k.v[parent_[b]])[axis_[b]]);
      a[b] = k.x[b].apply(a[parent_[b]]) + spatial::crm_mul(k.v[b], vj);
      f[b] = inertia_[b] * a[b] + spatial::crf_mul(k.v[b], inertia_[b] * k.v[b]) - gravity_force(k, b);
    }
    VecN h;
    for (int b = kBodies - 1; b >= 1; --b) {
      h[6 + b - 1] = f[b][axis_[b]];
      f[parent_[b]] += k.x[b].apply_transpose_force(f[b]);
    }
    h.head<6>() = f[0];
    return h;
  }

  FootJacobian foot_jacobian(const Kin& k, int leg) const {
    FootJacobian jac = FootJacobian::Zero();
    const int calf = leg * 3 + 3;
    Eigen::Matrix<double, 3, 6> point;
    point.leftCols<3>() = -k.rot[calf] * skew(foot_);
    point.rightCols<3>() = k.rot[calf];
    Mat6 chain = Mat6::Identity();
    for (int b = calf; b != 0; b = parent_[b]) {
      jac.col(6 + b - 1) = point * chain.col(axis_[b]);
      chain = chain * k.xm[b];
    }
    jac.leftCols<6>() = point * chain;
    return jac;
  }

  void check_finite(const SimState& n) const {
    if (!n.base_position.allFinite()) throw SimulationFault("base_position");
    if (!n.base_orientation.coeffs().allFinite()) throw SimulationFault("base_orientation");
    if (!n.base_lin_vel.allFinite()) throw SimulationFault("base_lin_vel");
    if (!n.base_ang_vel.allFinite()) throw SimulationFault("base_ang_vel");
    for (int j = 0; j < kNumJoints; ++j) {
      if (!std::isfinite(n.q[j])) throw SimulationFault("q[" + std::to_string(j) + "]");
      if (!std::isfinite(n.qd[j])) throw SimulationFault("qd[" + std::to_string(j) + "]");
    }
  }

  RobotDescription desc_;
  SimParams params_;
  std::array<Mat6, kBodies> inertia_;
  std::array<double, kBodies> mass_{};
  std::array<Vec3, kBodies> com_;
  std::array<int, kBodies> parent_{};
  std::array<Vec3, kBodies> origin_;
  std::array<int, kBodies> axis_{};
  double armature_ = 0.0;
  Vec3 foot_;
};

}  // namespace mevius
