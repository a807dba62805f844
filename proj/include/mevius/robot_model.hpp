#pragma once

// Robot description and leg kinematics for the 12-DoF quadruped.
//
// Frames: the base frame is x forward, y left, z up. Each leg has a hip frame
// at its hip-roll joint, axes aligned with the base. Joint order per leg is
// (hip roll about x, thigh pitch about y, calf pitch about y). At q = 0 the
// thigh and calf both point along -z of the hip frame.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "mevius/common.hpp"

namespace mevius {

enum class FourBarMode { Parallelogram, General };

/// Calf-rod transmission geometry. The crank sits on the calf motor axis, the
/// rocker on the calf joint axis, and the frame link joins the two axes.
struct FourBarGeometry {
  double crank_length = 0.04;
  double rod_length = 0.25;
  double rocker_length = 0.04;
  double frame_length = 0.25;
  double motor_zero_offset = 0.0;
  FourBarMode mode = FourBarMode::Parallelogram;
};

struct JointLimit {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double q) const { return q >= lower && q <= upper; }
};

/// Inertial properties of one rigid link, expressed in the link's joint frame.
struct LinkInertia {
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia_com = Mat3::Zero();
};

struct RobotDescription {
  std::string name = "mevius";
  double total_mass = 15.5;
  double base_mass = 9.5;
  Mat3 base_inertia = Mat3::Zero();
  Vec3 base_dims{0.44, 0.24, 0.12};
  std::array<Vec3, kNumLegs> hip_offsets{
      Vec3{0.22, 0.08, 0.0}, Vec3{0.22, -0.08, 0.0}, Vec3{-0.22, 0.08, 0.0}, Vec3{-0.22, -0.08, 0.0}};
  double hip_abduction_offset = 0.09;
  double thigh_length = 0.25;
  double calf_length = 0.25;
  /// Per-joint link masses in joint order (hip, thigh, calf for FL, FR, RL, RR).
  JointArray link_masses{};
  /// Link centre of mass along the segment, as a fraction of its length from
  /// the proximal joint.
  double thigh_com_fraction = 0.5;
  double calf_com_fraction = 0.5;
  std::array<JointLimit, kNumJoints> joint_limits{};
  double torque_limit = 25.0;
  double velocity_limit = 20.0;
  double gear_ratio = 10.0;
  double rotor_inertia = 6e-5;
  JointArray default_pose{};
  FourBarGeometry fourbar;

  double reflected_rotor_inertia() const { return rotor_inertia * gear_ratio * gear_ratio; }
  double summed_mass() const {
    double m = base_mass;
    for (double lm : link_masses) m += lm;
    return m;
  }
  LinkInertia link_inertia(int joint) const;
  /// Translation from the parent joint frame to this joint's frame.
  Vec3 joint_origin(int joint) const;
};

namespace detail {

inline Mat3 box_inertia(double m, const Vec3& dims) {
  const double a = dims.x() * dims.x(), b = dims.y() * dims.y(), c = dims.z() * dims.z();
  return Eigen::Vector3d{m * (b + c) / 12.0, m * (a + c) / 12.0, m * (a + b) / 12.0}.asDiagonal();
}

inline JointArray per_role(double hip, double thigh, double calf) {
  JointArray out{};
  for (int leg = 0; leg < kNumLegs; ++leg) {
    out[leg * 3 + 0] = hip;
    out[leg * 3 + 1] = thigh;
    out[leg * 3 + 2] = calf;
  }
  return out;
}

}  // namespace detail

inline LinkInertia RobotDescription::link_inertia(int joint) const {
  const int role = joint % 3;
  const double s = side_sign(leg_side(joint / 3));
  LinkInertia li;
  li.mass = link_masses[joint];
  switch (role) {
    case 0:
      li.com = Vec3{0.0, s * 0.5 * hip_abduction_offset, 0.0};
      li.inertia_com = detail::box_inertia(li.mass, Vec3{0.08, hip_abduction_offset + 0.04, 0.08});
      break;
    case 1:
      li.com = Vec3{0.0, 0.0, -thigh_com_fraction * thigh_length};
      li.inertia_com = detail::box_inertia(li.mass, Vec3{0.04, 0.04, thigh_length});
      break;
    default:
      li.com = Vec3{0.0, 0.0, -calf_com_fraction * calf_length};
      li.inertia_com = detail::box_inertia(li.mass, Vec3{0.025, 0.025, calf_length});
      break;
  }
  return li;
}

inline Vec3 RobotDescription::joint_origin(int joint) const {
  const int leg = joint / 3;
  const double s = side_sign(leg_side(leg));
  switch (joint % 3) {
    case 0:
      return hip_offsets[leg];
    case 1:
      return Vec3{0.0, s * hip_abduction_offset, 0.0};
    default:
      return Vec3{0.0, 0.0, -thigh_length};
  }
}

// ---------------------------------------------------------------------------
// Four-bar transmission

namespace detail {

// Intersection of circle(c0, r0) and circle(c1, r1) on the side where
// cross(c1 - c0, x - c0) has the requested sign. Empty if no intersection.
inline std::optional<Eigen::Vector2d> circle_intersection(const Eigen::Vector2d& c0, double r0,
                                                          const Eigen::Vector2d& c1, double r1,
                                                          double side) {
  const Eigen::Vector2d d = c1 - c0;
  const double dist = d.norm();
  if (dist <= 0.0 || dist > r0 + r1 || dist < std::abs(r0 - r1)) return std::nullopt;
  const Eigen::Vector2d u = d / dist;
  const double along = (dist * dist + r0 * r0 - r1 * r1) / (2.0 * dist);
  const double h = std::sqrt(std::max(0.0, r0 * r0 - along * along));
  const Eigen::Vector2d n{-u.y(), u.x()};
  return Eigen::Vector2d(c0 + along * u + (side >= 0.0 ? h : -h) * n);
}

}  // namespace detail

/// Calf motor angle to calf joint angle.
///
/// Linkage plane: motor axis O at the origin, calf axis P at (frame, 0). The
/// crank tip is at crank * (-sin t, cos t); the rocker tip at P + rocker *
/// (-sin p, cos p). The open assembly (rocker tip on the positive side of the
/// crank-tip-to-P line) is the branch continuous with the zero pose.
inline double fourbar_motor_to_joint(const FourBarGeometry& g, double motor_angle) {
  if (g.mode == FourBarMode::Parallelogram) return motor_angle + g.motor_zero_offset;
  const Eigen::Vector2d crank_tip{-g.crank_length * std::sin(motor_angle),
                                  g.crank_length * std::cos(motor_angle)};
  const Eigen::Vector2d pivot{g.frame_length, 0.0};
  // Side is measured with crank_tip as origin: cross(pivot - A, B - A) > 0.
  auto tip = detail::circle_intersection(crank_tip, g.rod_length, pivot, g.rocker_length, 1.0);
  if (!tip) {
    throw FourBarLockupError("four-bar lockup at motor angle " + std::to_string(motor_angle));
  }
  const Eigen::Vector2d r = *tip - pivot;
  return std::atan2(-r.x(), r.y()) + g.motor_zero_offset;
}

/// Calf joint angle to calf motor angle; inverse of fourbar_motor_to_joint.
inline double fourbar_joint_to_motor(const FourBarGeometry& g, double joint_angle) {
  if (g.mode == FourBarMode::Parallelogram) return joint_angle - g.motor_zero_offset;
  const double phi = joint_angle - g.motor_zero_offset;
  const Eigen::Vector2d pivot{g.frame_length, 0.0};
  const Eigen::Vector2d rocker_tip =
      pivot + g.rocker_length * Eigen::Vector2d{-std::sin(phi), std::cos(phi)};
  // Two crank-tip candidates. Keep those whose forward assembly reproduces
  // this rocker tip; if both do, the one nearest the parallelogram guess.
  const Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  const double tol = 1e-9 * (g.frame_length + g.rod_length);
  double best_dist = std::numeric_limits<double>::infinity(), best = 0.0;
  for (double side : {1.0, -1.0}) {
    auto a = detail::circle_intersection(origin, g.crank_length, rocker_tip, g.rod_length, side);
    if (!a) break;
    auto b = detail::circle_intersection(*a, g.rod_length, pivot, g.rocker_length, 1.0);
    if (!b || (*b - rocker_tip).norm() > tol) continue;
    const double theta = std::atan2(-a->x(), a->y());
    const double dist = std::abs(wrap_angle(theta - phi));
    if (dist < best_dist) {
      best_dist = dist;
      best = theta;
    }
  }
  if (std::isfinite(best_dist)) return best;
  throw FourBarLockupError("four-bar lockup at joint angle " + std::to_string(joint_angle));
}

/// d(joint)/d(motor) by central difference of the closed-form map.
inline double fourbar_ratio(const FourBarGeometry& g, double motor_angle) {
  if (g.mode == FourBarMode::Parallelogram) return 1.0;
  constexpr double h = 1e-6;
  return (fourbar_motor_to_joint(g, motor_angle + h) - fourbar_motor_to_joint(g, motor_angle - h)) /
         (2.0 * h);
}

// ---------------------------------------------------------------------------
// Defaults, validation, JSON

inline RobotDescription default_description() {
  RobotDescription d;
  d.link_masses = detail::per_role(0.7, 0.6, 0.2);
  const auto hip = JointLimit{-0.7, 0.7}, thigh = JointLimit{-0.1, 1.6}, calf = JointLimit{-2.3, -0.5};
  for (int leg = 0; leg < kNumLegs; ++leg) {
    d.joint_limits[leg * 3 + 0] = hip;
    d.joint_limits[leg * 3 + 1] = thigh;
    d.joint_limits[leg * 3 + 2] = calf;
  }
  d.default_pose = detail::per_role(0.0, 0.8, -1.2);
  d.base_inertia = detail::box_inertia(d.base_mass, d.base_dims);
  d.total_mass = d.summed_mass();
  return d;
}

inline void validate(const RobotDescription& d) {
  auto fail = [](const std::string& field, const std::string& constraint) {
    throw ConfigError(field + ": " + constraint);
  };
  auto positive = [&](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(field, "lengths strictly positive");
  };
  positive(d.thigh_length, "thigh_length");
  positive(d.calf_length, "calf_length");
  if (!(d.hip_abduction_offset >= 0.0)) fail("hip_abduction_offset", "must be non-negative");
  if (!(d.thigh_com_fraction >= 0.0 && d.thigh_com_fraction <= 1.0)) fail("thigh_com_fraction", "must lie in [0, 1]");
  if (!(d.calf_com_fraction >= 0.0 && d.calf_com_fraction <= 1.0)) fail("calf_com_fraction", "must lie in [0, 1]");
  for (int i = 0; i < 3; ++i) positive(d.base_dims[i], "base_dims");
  if (!(d.base_mass > 0.0)) fail("base_mass", "masses strictly positive");
  for (double m : d.link_masses)
    if (!(m > 0.0)) fail("link_masses", "masses strictly positive");
  if (std::abs(d.summed_mass() - d.total_mass) > 1e-9)
    fail("total_mass", "must equal base_mass + sum(link_masses) within 1e-9 (sum is " +
                           std::to_string(d.summed_mass()) + ")");
  if (!(d.torque_limit > 0.0)) fail("torque_limit", "must be positive");
  if (!(d.velocity_limit > 0.0)) fail("velocity_limit", "must be positive");
  if (!(d.gear_ratio > 0.0)) fail("gear_ratio", "must be positive");
  if (!(d.rotor_inertia >= 0.0)) fail("rotor_inertia", "must be non-negative");
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(d.joint_limits[j].lower < d.joint_limits[j].upper))
      fail("joint_limits[" + std::to_string(j) + "]", "limit interval must be non-empty");
  }
  const auto eig = Eigen::SelfAdjointEigenSolver<Mat3>(d.base_inertia).eigenvalues();
  if (!(eig.minCoeff() > 0.0)) fail("base_inertia", "must be symmetric positive definite");

  const auto& fb = d.fourbar;
  positive(fb.crank_length, "fourbar.crank_length");
  positive(fb.rod_length, "fourbar.rod_length");
  positive(fb.rocker_length, "fourbar.rocker_length");
  positive(fb.frame_length, "fourbar.frame_length");
  if (fb.mode == FourBarMode::Parallelogram) {
    if (std::abs(fb.crank_length - fb.rocker_length) > 1e-12 ||
        std::abs(fb.rod_length - fb.frame_length) > 1e-12)
      fail("fourbar", "parallelogram mode requires crank == rocker and rod == frame");
  } else {
    // Every calf angle in the joint range must be reachable by an assembled linkage.
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const auto lim = d.joint_limits[leg * 3 + 2];
      constexpr int kSamples = 721;
      for (int k = 0; k < kSamples; ++k) {
        const double q = lim.lower + (lim.upper - lim.lower) * k / (kSamples - 1);
        try {
          (void)fourbar_joint_to_motor(fb, q);
        } catch (const FourBarLockupError&) {
          fail("fourbar", "no assembly for calf angle " + std::to_string(q) +
                              " within the joint range (Grashof feasibility)");
        }
      }
    }
  }
}

namespace detail {

inline Vec3 vec3_from(const nlohmann::json& j) { return Vec3{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
inline nlohmann::json to_json_vec(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline JointArray joint_array_from(const nlohmann::json& j, const char* field) {
  JointArray out{};
  if (j.is_object()) return per_role(j.at("hip").get<double>(), j.at("thigh").get<double>(), j.at("calf").get<double>());
  if (!j.is_array() || j.size() != kNumJoints)
    throw ConfigError(std::string(field) + ": expected 12 values or {hip, thigh, calf}");
  for (int i = 0; i < kNumJoints; ++i) out[i] = j.at(i).get<double>();
  return out;
}

}  // namespace detail

inline RobotDescription description_from_json(const nlohmann::json& j) {
  RobotDescription d = default_description();
  bool base_inertia_given = false;
  try {
    d.name = j.value("name", d.name);
    if (j.contains("base")) {
      const auto& b = j.at("base");
      d.base_mass = b.value("mass", d.base_mass);
      if (b.contains("dims")) d.base_dims = detail::vec3_from(b.at("dims"));
      if (b.contains("inertia")) {
        const auto& in = b.at("inertia");
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) d.base_inertia(r, c) = in.at(r).at(c).get<double>();
        base_inertia_given = true;
      }
    }
    if (j.contains("hip_offsets")) {
      const auto& h = j.at("hip_offsets");
      if (h.size() != kNumLegs) throw ConfigError("hip_offsets: expected 4 entries (FL, FR, RL, RR)");
      for (int i = 0; i < kNumLegs; ++i) d.hip_offsets[i] = detail::vec3_from(h.at(i));
    }
    d.hip_abduction_offset = j.value("hip_abduction_offset", d.hip_abduction_offset);
    d.thigh_length = j.value("thigh_length", d.thigh_length);
    d.calf_length = j.value("calf_length", d.calf_length);
    d.thigh_com_fraction = j.value("thigh_com_fraction", d.thigh_com_fraction);
    d.calf_com_fraction = j.value("calf_com_fraction", d.calf_com_fraction);
    if (j.contains("link_masses")) d.link_masses = detail::joint_array_from(j.at("link_masses"), "link_masses");
    if (j.contains("joint_limits")) {
      const auto& l = j.at("joint_limits");
      if (l.is_object()) {
        for (int leg = 0; leg < kNumLegs; ++leg)
          for (int role = 0; role < 3; ++role) {
            const auto& pair = l.at(kJointRoleNames[role]);
            d.joint_limits[leg * 3 + role] = JointLimit{pair.at(0).get<double>(), pair.at(1).get<double>()};
          }
      } else {
        if (l.size() != kNumJoints) throw ConfigError("joint_limits: expected 12 [min, max] pairs");
        for (int i = 0; i < kNumJoints; ++i) d.joint_limits[i] = JointLimit{l.at(i).at(0).get<double>(), l.at(i).at(1).get<double>()};
      }
    }
    d.torque_limit = j.value("torque_limit", d.torque_limit);
    d.velocity_limit = j.value("velocity_limit", d.velocity_limit);
    d.gear_ratio = j.value("gear_ratio", d.gear_ratio);
    d.rotor_inertia = j.value("rotor_inertia", d.rotor_inertia);
    if (j.contains("default_pose")) d.default_pose = detail::joint_array_from(j.at("default_pose"), "default_pose");
    if (j.contains("fourbar")) {
      const auto& f = j.at("fourbar");
      auto& fb = d.fourbar;
      const std::string mode = f.value("mode", std::string("parallelogram"));
      if (mode == "parallelogram") {
        fb.mode = FourBarMode::Parallelogram;
      } else if (mode == "general") {
        fb.mode = FourBarMode::General;
      } else {
        throw ConfigError("fourbar.mode: expected 'parallelogram' or 'general'");
      }
      fb.crank_length = f.value("crank_length", fb.crank_length);
      fb.rod_length = f.value("rod_length", fb.rod_length);
      fb.rocker_length = f.value("rocker_length", fb.rocker_length);
      fb.frame_length = f.value("frame_length", fb.frame_length);
      fb.motor_zero_offset = f.value("motor_zero_offset", fb.motor_zero_offset);
    }
    if (!base_inertia_given) d.base_inertia = detail::box_inertia(d.base_mass, d.base_dims);
    d.total_mass = j.value("total_mass", d.summed_mass());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("robot description: ") + e.what());
  }
  validate(d);
  return d;
}

inline nlohmann::json description_to_json(const RobotDescription& d) {
  nlohmann::json j;
  j["name"] = d.name;
  j["total_mass"] = d.total_mass;
  nlohmann::json inertia = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) inertia.push_back({d.base_inertia(r, 0), d.base_inertia(r, 1), d.base_inertia(r, 2)});
  j["base"] = {{"mass", d.base_mass}, {"dims", detail::to_json_vec(d.base_dims)}, {"inertia", inertia}};
  j["hip_offsets"] = nlohmann::json::array();
  for (const auto& h : d.hip_offsets) j["hip_offsets"].push_back(detail::to_json_vec(h));
  j["hip_abduction_offset"] = d.hip_abduction_offset;
  j["thigh_com_fraction"] = d.thigh_com_fraction;
  j["calf_com_fraction"] = d.calf_com_fraction;
  j["thigh_length"] = d.thigh_length;
  j["calf_length"] = d.calf_length;
  j["link_masses"] = d.link_masses;
  j["joint_limits"] = nlohmann::json::array();
  for (const auto& l : d.joint_limits) j["joint_limits"].push_back({l.lower, l.upper});
  j["torque_limit"] = d.torque_limit;
  j["velocity_limit"] = d.velocity_limit;
  j["gear_ratio"] = d.gear_ratio;
  j["rotor_inertia"] = d.rotor_inertia;
  j["default_pose"] = d.default_pose;
  const auto& fb = d.fourbar;
  j["fourbar"] = {{"mode", fb.mode == FourBarMode::Parallelogram ? "parallelogram" : "general"},
                  {"crank_length", fb.crank_length},
                  {"rod_length", fb.rod_length},
                  {"rocker_length", fb.rocker_length},
                  {"frame_length", fb.frame_length},
                  {"motor_zero_offset", fb.motor_zero_offset}};
  return j;
}

inline RobotDescription load_description(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open robot description: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("parse failure in " + path.string() + ": " + e.what());
  }
  return description_from_json(j);
}

// ---------------------------------------------------------------------------
// Kinematics

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
};

using LegAngles = Eigen::Vector3d;
using FootPositions = std::array<Vec3, kNumLegs>;

/// Foot position relative to the hip-roll joint, in hip-frame axes.
inline Vec3 leg_forward_kinematics(const RobotDescription& d, const LegAngles& q, Side side) {
  const double s1 = std::sin(q[0]), c1 = std::cos(q[0]);
  const double s2 = std::sin(q[1]), c2 = std::cos(q[1]);
  const double s23 = std::sin(q[1] + q[2]), c23 = std::cos(q[1] + q[2]);
  // Foot in the leg plane (after roll): x forward, z down the leg.
  const double fx = -d.thigh_length * s2 - d.calf_length * s23;
  const double fz = -d.thigh_length * c2 - d.calf_length * c23;
  const double fy = side_sign(side) * d.hip_abduction_offset;
  return Vec3{fx, c1 * fy - s1 * fz, s1 * fy + c1 * fz};
}

inline LegAngles leg_angles(const JointArray& q, int leg) {
  return LegAngles{q[leg * 3], q[leg * 3 + 1], q[leg * 3 + 2]};
}

/// True when any joint is outside its limits; FK itself is total.
inline bool outside_limits(const RobotDescription& d, const JointArray& q) {
  for (int j = 0; j < kNumJoints; ++j)
    if (!d.joint_limits[j].contains(q[j])) return true;
  return false;
}

inline FootPositions forward_kinematics(const RobotDescription& d, const JointArray& q, const Pose& base) {
  FootPositions feet;
  const Mat3 r = base.orientation.toRotationMatrix();
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3 local = d.hip_offsets[leg] + leg_forward_kinematics(d, leg_angles(q, leg), leg_side(leg));
    feet[leg] = base.position + r * local;
  }
  return feet;
}

/// Analytic IK returning the knee-backward branch (calf <= 0).
inline LegAngles leg_inverse_kinematics(const RobotDescription& d, const Vec3& foot, Side side) {
  const double lt = d.thigh_length, lc = d.calf_length;
  const double off = side_sign(side) * d.hip_abduction_offset;
  const double r_yz2 = foot.y() * foot.y() + foot.z() * foot.z() - off * off;
  const double reach_max = lt + lc, reach_min = std::abs(lt - lc);
  if (r_yz2 < 0.0) {
    const double dist = foot.norm();
    throw UnreachableError("target inside the abduction offset cylinder", dist,
                           std::sqrt(off * off + reach_min * reach_min));
  }
  // Leg-plane coordinates of the foot; the foot is below the hip in the leg plane.
  const double fz = -std::sqrt(r_yz2);
  const double fx = foot.x();
  const double len = std::hypot(fx, fz);
  if (len > reach_max || len < reach_min) {
    const double nearest = clamp(len, reach_min, reach_max);
    throw UnreachableError("target outside the reachable annulus: leg-plane distance " +
                               std::to_string(len) + " m, nearest reachable " + std::to_string(nearest) + " m",
                           len, nearest);
  }
  const double q1 = wrap_angle(std::atan2(foot.z(), foot.y()) - std::atan2(fz, off));
  const double cos_knee = clamp((len * len - lt * lt - lc * lc) / (2.0 * lt * lc), -1.0, 1.0);
  const double q3 = -std::acos(cos_knee);
  // Leg vector with thigh at zero, then rotate about y to match (fx, fz).
  const double vx = -lc * std::sin(q3);
  const double vz = -lt - lc * std::cos(q3);
  const double q2 = wrap_angle(std::atan2(fx, fz) - std::atan2(vx, vz));
  return LegAngles{q1, q2, q3};
}

/// d(foot in hip frame)/d(q_leg); columns in joint order.
inline Mat3 leg_jacobian(const RobotDescription& d, const LegAngles& q, Side side) {
  const Vec3 foot = leg_forward_kinematics(d, q, side);
  const Mat3 r1 = rot_x(q[0]);
  const Vec3 thigh_origin = r1 * Vec3{0.0, side_sign(side) * d.hip_abduction_offset, 0.0};
  const Vec3 pitch_axis = r1 * Vec3::UnitY();
  const Vec3 knee = thigh_origin + r1 * rot_y(q[1]) * Vec3{0.0, 0.0, -d.thigh_length};
  Mat3 j;
  j.col(0) = Vec3::UnitX().cross(foot);
  j.col(1) = pitch_axis.cross(foot - thigh_origin);
  j.col(2) = pitch_axis.cross(foot - knee);
  return j;
}

}  // namespace mevius
