#pragma once

// Episode log: one record per policy tick, one per bus cycle.
//
// File layout (little-endian):
//   char[8] magic "MVEPLOG1"
//   frames: u32 payload length, u8 type, payload, u32 FNV-1a over type+payload
// Frame types: 1 header, 2 policy tick, 3 bus cycle, 4 footer. The footer
// repeats the record counts, so a file cut at a frame boundary is detected.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mevius/common.hpp"
#include "mevius/terrain.hpp"

namespace mevius {

enum class Termination : std::uint32_t { Running = 0, Completed = 1, Fall = 2, Fault = 3 };

inline const char* termination_name(Termination t) {
  switch (t) {
    case Termination::Running: return "running";
    case Termination::Completed: return "completed";
    case Termination::Fall: return "fall";
    case Termination::Fault: return "fault";
  }
  return "?";
}

inline constexpr std::uint32_t kEpisodeLogVersion = 1;

struct LogHeader {
  std::uint32_t version = kEpisodeLogVersion;
  std::uint64_t seed = 0;
  std::int32_t delay_frames = 0;
  double duration = 0.0;
  double physics_dt = 0.0;
  double policy_rate = 0.0;
  double bus_rate = 0.0;
  double latency_min = 0.0;
  double latency_max = 0.0;
  double latency_command_fraction = 0.0;
  std::uint32_t terrain_kind = 0;
  Vec3 initial_position = Vec3::Zero();
  /// Joint used for the phase lag metric.
  std::int32_t lag_joint = 1;
  std::string label;
};

struct PolicyFrame {
  std::int64_t tick = 0;
  double time = 0.0;
  Vec3 commands = Vec3::Zero();
  JointArray action{};
  /// Host-side joint targets in force from this tick.
  JointArray target{};
  JointArray kp{}, kd{};
  /// Plant joint state and servo torque at the tick.
  JointArray q{}, qd{}, torque{};
  Vec3 base_position = Vec3::Zero();
  Quat base_orientation = Quat::Identity();
  Vec3 base_lin_vel = Vec3::Zero();
  Vec3 base_ang_vel = Vec3::Zero();
  /// Oldest motor sample in the feedback snapshot the observation used.
  double snapshot_time = 0.0;
  /// Latest arrival over motors of the first bus cycle carrying this tick's
  /// targets, and the physics step where it took effect; -1 if never sent.
  double command_arrival = -1.0;
  double command_effect = -1.0;
  std::array<bool, kNumLegs> contacts{};
  bool scripted = false;
};

struct BusFrame {
  std::int64_t tick = 0;
  /// Policy tick whose targets this cycle carries, -1 for scripted/hold.
  std::int32_t source = -1;
  JointArray p_des{}, kp{}, kd{};
  JointArray command_arrival{};
};

struct EpisodeLog {
  LogHeader header;
  std::vector<PolicyFrame> frames;
  std::vector<BusFrame> bus;
  Termination termination = Termination::Running;
  double end_time = 0.0;
  std::string fault;
};

namespace detail {

inline std::uint32_t fnv1a(const std::string& bytes) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

inline void put_i64(std::ostream& os, std::int64_t v) { put_u64(os, static_cast<std::uint64_t>(v)); }
inline std::int64_t get_i64(std::istream& is) { return static_cast<std::int64_t>(get_u64(is)); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
  const auto n = get_u32(is);
  if (n > (1u << 20)) throw FormatError("string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("unexpected end of record");
  return s;
}
inline void put_vec(std::ostream& os, const Vec3& v) {
  for (int i = 0; i < 3; ++i) put_f64(os, v[i]);
}
inline Vec3 get_vec(std::istream& is) {
  Vec3 v;
  for (int i = 0; i < 3; ++i) v[i] = get_f64(is);
  return v;
}
inline void put_joints(std::ostream& os, const JointArray& a) {
  for (double x : a) put_f64(os, x);
}
inline void get_joints(std::istream& is, JointArray& a) {
  for (double& x : a) x = get_f64(is);
}

inline void write_frame(std::ostream& os, std::uint8_t type, const std::string& payload) {
  std::string body(1, static_cast<char>(type));
  body += payload;
  put_u32(os, static_cast<std::uint32_t>(payload.size()));
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  put_u32(os, fnv1a(body));
}

}  // namespace detail

inline void write_episode_log(std::ostream& os, const EpisodeLog& log) {
  using namespace detail;
  os.write("MVEPLOG1", 8);
  {
    std::ostringstream p;
    const auto& h = log.header;
    put_u32(p, h.version);
    put_u64(p, h.seed);
    put_u32(p, static_cast<std::uint32_t>(h.delay_frames));
    put_f64(p, h.duration);
    put_f64(p, h.physics_dt);
    put_f64(p, h.policy_rate);
    put_f64(p, h.bus_rate);
    put_f64(p, h.latency_min);
    put_f64(p, h.latency_max);
    put_f64(p, h.latency_command_fraction);
    put_u32(p, h.terrain_kind);
    put_vec(p, h.initial_position);
    put_u32(p, static_cast<std::uint32_t>(h.lag_joint));
    put_str(p, h.label);
    write_frame(os, 1, p.str());
  }
  for (const auto& f : log.frames) {
    std::ostringstream p;
    put_i64(p, f.tick);
    put_f64(p, f.time);
    put_vec(p, f.commands);
    for (const auto* a : {&f.action, &f.target, &f.kp, &f.kd, &f.q, &f.qd, &f.torque}) put_joints(p, *a);
    put_vec(p, f.base_position);
    put_f64(p, f.base_orientation.w());
    put_vec(p, f.base_orientation.vec());
    put_vec(p, f.base_lin_vel);
    put_vec(p, f.base_ang_vel);
    put_f64(p, f.snapshot_time);
    put_f64(p, f.command_arrival);
    put_f64(p, f.command_effect);
    std::uint32_t bits = f.scripted ? 16u : 0u;
    for (int l = 0; l < kNumLegs; ++l) bits |= f.contacts[l] ? (1u << l) : 0u;
    put_u32(p, bits);
    write_frame(os, 2, p.str());
  }
  for (const auto& b : log.bus) {
    std::ostringstream p;
    put_i64(p, b.tick);
    put_u32(p, static_cast<std::uint32_t>(b.source));
    for (const auto* a : {&b.p_des, &b.kp, &b.kd, &b.command_arrival}) put_joints(p, *a);
    write_frame(os, 3, p.str());
  }
  {
    std::ostringstream p;
    put_u32(p, static_cast<std::uint32_t>(log.termination));
    put_f64(p, log.end_time);
    put_str(p, log.fault);
    put_u64(p, log.frames.size());
    put_u64(p, log.bus.size());
    write_frame(os, 4, p.str());
  }
}

inline EpisodeLog read_episode_log(std::istream& is) {
  using namespace detail;
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "MVEPLOG1", 8) != 0) throw FormatError("not an episode log");
  EpisodeLog log;
  int index = 0;
  std::string last_valid = "none (file header only)";
  auto corrupt = [&](const std::string& why) {
    return FormatError("corrupt log: frame " + std::to_string(index) + " " + why + "; last valid frame: " + last_valid);
  };
  bool have_header = false, have_footer = false;
  while (!have_footer) {
    unsigned char lenb[4];
    if (!is.read(reinterpret_cast<char*>(lenb), 4)) {
      if (is.gcount() == 0) throw corrupt("missing (log ends without footer)");
      throw corrupt("truncated in length prefix");
    }
    const std::uint32_t len = lenb[0] | (lenb[1] << 8) | (lenb[2] << 16) | (std::uint32_t{lenb[3]} << 24);
    if (len > (1u << 24)) throw corrupt("has implausible length " + std::to_string(len));
    std::string body(len + 1, '\0');
    if (!is.read(body.data(), static_cast<std::streamsize>(body.size()))) throw corrupt("truncated in payload");
    unsigned char sumb[4];
    if (!is.read(reinterpret_cast<char*>(sumb), 4)) throw corrupt("truncated in checksum");
    const std::uint32_t sum = sumb[0] | (sumb[1] << 8) | (sumb[2] << 16) | (std::uint32_t{sumb[3]} << 24);
    if (sum != fnv1a(body)) throw corrupt("fails its checksum");
    const auto type = static_cast<std::uint8_t>(body[0]);
    std::istringstream p(body.substr(1));
    try {
      switch (type) {
        case 1: {
          if (have_header) throw corrupt("repeats the header");
          auto& h = log.header;
          h.version = get_u32(p);
          if (h.version != kEpisodeLogVersion)
            throw FormatError("unsupported episode log version " + std::to_string(h.version));
          h.seed = get_u64(p);
          h.delay_frames = static_cast<std::int32_t>(get_u32(p));
          h.duration = get_f64(p);
          h.physics_dt = get_f64(p);
          h.policy_rate = get_f64(p);
          h.bus_rate = get_f64(p);
          h.latency_min = get_f64(p);
          h.latency_max = get_f64(p);
          h.latency_command_fraction = get_f64(p);
          h.terrain_kind = get_u32(p);
          h.initial_position = get_vec(p);
          h.lag_joint = static_cast<std::int32_t>(get_u32(p));
          h.label = get_str(p);
          have_header = true;
          last_valid = "#0 (header)";
          break;
        }
        case 2: {
          if (!have_header) throw corrupt("precedes the header");
          PolicyFrame f;
          f.tick = get_i64(p);
          f.time = get_f64(p);
          f.commands = get_vec(p);
          for (auto* a : {&f.action, &f.target, &f.kp, &f.kd, &f.q, &f.qd, &f.torque}) get_joints(p, *a);
          f.base_position = get_vec(p);
          const double w = get_f64(p);
          const Vec3 v = get_vec(p);
          f.base_orientation = Quat(w, v.x(), v.y(), v.z());
          f.base_lin_vel = get_vec(p);
          f.base_ang_vel = get_vec(p);
          f.snapshot_time = get_f64(p);
          f.command_arrival = get_f64(p);
          f.command_effect = get_f64(p);
          const auto bits = get_u32(p);
          for (int l = 0; l < kNumLegs; ++l) f.contacts[l] = (bits >> l) & 1u;
          f.scripted = (bits & 16u) != 0;
          log.frames.push_back(f);
          last_valid = "#" + std::to_string(index) + " (policy tick " + std::to_string(log.frames.size() - 1) +
                       ", t = " + std::to_string(f.time) + " s)";
          break;
        }
        case 3: {
          if (!have_header) throw corrupt("precedes the header");
          BusFrame b;
          b.tick = get_i64(p);
          b.source = static_cast<std::int32_t>(get_u32(p));
          for (auto* a : {&b.p_des, &b.kp, &b.kd, &b.command_arrival}) get_joints(p, *a);
          log.bus.push_back(b);
          last_valid = "#" + std::to_string(index) + " (bus cycle " + std::to_string(log.bus.size() - 1) + ")";
          break;
        }
        case 4: {
          if (!have_header) throw corrupt("precedes the header");
          const auto t = get_u32(p);
          if (t > 3) throw corrupt("has unknown termination " + std::to_string(t));
          log.termination = static_cast<Termination>(t);
          log.end_time = get_f64(p);
          log.fault = get_str(p);
          const auto nf = get_u64(p), nb = get_u64(p);
          if (nf != log.frames.size() || nb != log.bus.size()) throw corrupt("footer counts do not match the records");
          have_footer = true;
          break;
        }
        default: throw corrupt("has unknown type " + std::to_string(type));
      }
    } catch (const FormatError& e) {
      if (std::string(e.what()).rfind("corrupt log", 0) == 0) throw;
      throw corrupt(std::string("is malformed: ") + e.what());
    }
    ++index;
  }
  return log;
}

inline void save_episode_log(const std::filesystem::path& path, const EpisodeLog& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_episode_log(os, log);
}

inline EpisodeLog load_episode_log(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_episode_log(is);
}

/// One row per policy tick.
inline void write_episode_csv(std::ostream& os, const EpisodeLog& log) {
  os << "tick,time,cmd_vx,cmd_vy,cmd_wz";
  for (const char* g : {"action", "target", "q", "qd", "torque"})
    for (int j = 0; j < kNumJoints; ++j) os << ',' << g << j;
  os << ",x,y,z,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,snapshot_time,command_arrival,command_effect,contacts\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << ',' << buf;
  };
  for (const auto& f : log.frames) {
    os << f.tick;
    num(f.time);
    for (int i = 0; i < 3; ++i) num(f.commands[i]);
    for (const auto* a : {&f.action, &f.target, &f.q, &f.qd, &f.torque})
      for (double v : *a) num(v);
    for (int i = 0; i < 3; ++i) num(f.base_position[i]);
    num(f.base_orientation.w());
    for (int i = 0; i < 3; ++i) num(f.base_orientation.vec()[i]);
    for (int i = 0; i < 3; ++i) num(f.base_lin_vel[i]);
    for (int i = 0; i < 3; ++i) num(f.base_ang_vel[i]);
    num(f.snapshot_time);
    num(f.command_arrival);
    num(f.command_effect);
    os << ',';
    for (bool c : f.contacts) os << (c ? '1' : '0');
    os << '\n';
  }
}

}  // namespace mevius
