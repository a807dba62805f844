#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

namespace mevius {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr int kNumLegs = 4;
inline constexpr int kJointsPerLeg = 3;
inline constexpr int kNumJoints = kNumLegs * kJointsPerLeg;
inline constexpr double kGravity = 9.81;

using JointArray = std::array<double, kNumJoints>;

enum class Side { Left, Right };

/// Leg order FL, FR, RL, RR. Even legs are on the left.
inline constexpr Side leg_side(int leg) { return (leg % 2 == 0) ? Side::Left : Side::Right; }
inline constexpr double side_sign(Side s) { return s == Side::Left ? 1.0 : -1.0; }

inline constexpr std::array<const char*, kNumLegs> kLegNames{"FL", "FR", "RL", "RR"};
inline constexpr std::array<const char*, kJointsPerLeg> kJointRoleNames{"hip", "thigh", "calf"};

// Error hierarchy. Everything thrown by the library derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

/// Thrown by leg IK when the target lies outside the reachable annulus.
struct UnreachableError : Error {
  UnreachableError(const std::string& what, double distance, double nearest)
      : Error(what), distance(distance), nearest_reachable(nearest) {}
  double distance;
  double nearest_reachable;
};

struct FourBarLockupError : Error {
  using Error::Error;
};

/// Raised when the integrator produces a non-finite quantity.
struct SimulationFault : Error {
  SimulationFault(const std::string& quantity)
      : Error("non-finite simulation state: " + quantity), quantity(quantity) {}
  std::string quantity;
};

struct BusOverrunError : Error {
  BusOverrunError(double cycle_time, double budget)
      : Error("bus cycle overrun: serialization takes " + std::to_string(cycle_time * 1e3) +
              " ms, budget " + std::to_string(budget * 1e3) + " ms"),
        cycle_time(cycle_time),
        budget(budget) {}
  double cycle_time;
  double budget;
};

/// Portable seeded generator. std distributions are implementation defined,
/// so uniform/normal conversions are done here to keep runs bit-identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  Rng r(base ^ (0xD1B54A32D192ED03ull * (stream + 1)));
  r.next_u64();
  return r.next_u64();
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

template <typename T>
inline T clamp(T x, T lo, T hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace mevius
