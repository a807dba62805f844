#pragma once

// Single-channel daisy-chain bus model, motor-side impedance servo, and the
// policy action delay buffer.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <ostream>
#include <span>
#include <vector>

#include "mevius/codec.hpp"
#include "mevius/common.hpp"

namespace mevius {

struct LatencyModel {
  enum class Kind { Fixed, Uniform };
  Kind kind = Kind::Uniform;
  double min = 0.02;
  double max = 0.06;
  /// Share of the sampled latency placed on the command path; the rest
  /// delays feedback.
  double command_fraction = 1.0;

  double sample(Rng& rng) const { return kind == Kind::Fixed ? min : rng.uniform(min, max); }
  static LatencyModel fixed(double seconds, double command_fraction = 1.0) {
    return LatencyModel{Kind::Fixed, seconds, seconds, command_fraction};
  }
};

struct BusModel {
  double bitrate = 1e6;
  int frame_overhead_bits = 130;
  LatencyModel latency;
  int motor_count = kNumJoints;
  double cycle_rate = 150.0;

  double frame_time() const { return frame_overhead_bits / bitrate; }
  /// Wire time for one TX and one RX frame per motor.
  double serialization_time() const { return motor_count * 2 * frame_time(); }
  double cycle_period() const { return 1.0 / cycle_rate; }

  void validate() const {
    if (!(bitrate > 0.0)) throw ConfigError("bus.bitrate: must be positive");
    if (frame_overhead_bits <= 0) throw ConfigError("bus.frame_overhead_bits: must be positive");
    if (motor_count < 1) throw ConfigError("bus.motor_count: must be positive");
    if (!(latency.min >= 0.0) || latency.max < latency.min) throw ConfigError("bus.latency: need 0 <= min <= max");
    if (latency.command_fraction < 0.0 || latency.command_fraction > 1.0)
      throw ConfigError("bus.latency.command_fraction: must lie in [0, 1]");
    if (serialization_time() > cycle_period()) throw BusOverrunError(serialization_time(), cycle_period());
  }
};

struct MotorSlot {
  int motor_id = 0;
  /// End of the command frame on the wire; the motor samples its state here.
  double tx_end = 0.0;
  double rx_end = 0.0;
  /// Time the command takes effect at the motor.
  double command_arrival = 0.0;
  /// Time the reply is available to the host.
  double feedback_arrival = 0.0;
};

struct CycleSchedule {
  double start = 0.0;
  double cycle_end = 0.0;
  double latency = 0.0;
  std::vector<MotorSlot> slots;
};

/// Lays out one bus cycle in daisy-chain order: TX1 RX1 TX2 RX2 ... Each motor
/// replies with the state it sampled when its command frame completed.
inline CycleSchedule schedule_cycle(const BusModel& bus, double now, Rng& rng) {
  if (!std::isfinite(now)) throw Error("schedule_cycle: non-finite start time");
  if (bus.serialization_time() > bus.cycle_period()) throw BusOverrunError(bus.serialization_time(), bus.cycle_period());
  CycleSchedule cs;
  cs.start = now;
  cs.latency = bus.latency.sample(rng);
  const double cmd_lat = bus.latency.command_fraction * cs.latency;
  const double fb_lat = cs.latency - cmd_lat;
  const double ft = bus.frame_time();
  cs.slots.resize(bus.motor_count);
  for (int j = 0; j < bus.motor_count; ++j) {
    auto& s = cs.slots[j];
    s.motor_id = j + 1;
    s.tx_end = now + (2 * j + 1) * ft;
    s.rx_end = now + (2 * j + 2) * ft;
    s.command_arrival = s.tx_end + cmd_lat;
    s.feedback_arrival = s.rx_end + fb_lat;
  }
  cs.cycle_end = now + bus.serialization_time();
  return cs;
}

inline CycleSchedule schedule_cycle(const BusModel& bus, double now, std::uint64_t seed) {
  Rng rng(seed);
  return schedule_cycle(bus, now, rng);
}

/// Bus instance owned by one simulation loop. The channel is FIFO, so a cycle
/// with a shorter latency sample never overtakes an earlier one.
class BusScheduler {
 public:
  BusScheduler(BusModel model, std::uint64_t seed) : model_(model), rng_(seed) { model_.validate(); }

  CycleSchedule next_cycle(double now) {
    CycleSchedule cs = schedule_cycle(model_, now, rng_);
    for (auto& s : cs.slots) {
      s.command_arrival = std::max(s.command_arrival, last_command_arrival_);
      s.feedback_arrival = std::max(s.feedback_arrival, last_feedback_arrival_);
      last_command_arrival_ = s.command_arrival;
      last_feedback_arrival_ = s.feedback_arrival;
    }
    return cs;
  }

  const BusModel& model() const { return model_; }

 private:
  BusModel model_;
  Rng rng_;
  double last_command_arrival_ = -1e300;
  double last_feedback_arrival_ = -1e300;
};

// ---------------------------------------------------------------------------
// Servo

struct ServoState {
  double rotor_position = 0.0;  // output-shaft angle, rad
  double rotor_velocity = 0.0;
  MotorCommand last_command;
  bool has_command = false;
  bool torque_cut = false;
  double temperature_placeholder = 0.0;
};

/// Motor-side impedance law, saturated at the torque limit.
inline double servo_update(const ServoState& s, double torque_limit) {
  if (!s.has_command || s.torque_cut) return 0.0;
  const auto& c = s.last_command;
  const double tau = c.kp * (c.p_des - s.rotor_position) + c.kd * (c.v_des - s.rotor_velocity) + c.tau_ff;
  return clamp(tau, -torque_limit, torque_limit);
}

// ---------------------------------------------------------------------------
// Action delay

/// FIFO that releases each pushed value `delay` pushes later. Starts filled
/// with `fill`.
template <typename T>
class ActionDelayBuffer {
 public:
  ActionDelayBuffer(int max_depth, T fill) : max_depth_(max_depth) { reset(0, std::move(fill)); }

  void reset(int delay, T fill) {
    if (delay < 0) throw ConfigError("delay frames must be non-negative");
    if (delay > max_depth_) throw ConfigError("delay frames exceed buffer depth");
    delay_ = delay;
    queue_.assign(static_cast<std::size_t>(delay), std::move(fill));
  }

  T push_pop(T value) {
    queue_.push_back(std::move(value));
    T out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }

  int delay() const { return delay_; }
  int max_depth() const { return max_depth_; }

 private:
  int max_depth_;
  int delay_ = 0;
  std::deque<T> queue_;
};

inline int sample_delay_frames(Rng& rng, int lo = 1, int hi = 3) { return rng.uniform_int(lo, hi); }

// ---------------------------------------------------------------------------
// Frame dump

struct FrameRecord {
  enum class Direction { Tx, Rx };
  double time = 0.0;
  Direction direction = Direction::Tx;
  int motor_id = 0;
  std::vector<std::uint8_t> payload;
};

inline void write_frame_dump_header(std::ostream& os) {
  os << "time,direction,motor_id,raw_hex,p,v,kp,kd,tau\n";
}

/// One CSV row per frame; RX rows leave kp and kd empty.
inline void write_frame_dump_row(std::ostream& os, const FrameCodecSpec& spec, const FrameRecord& f) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", f.time);
  os << buf << ',' << (f.direction == FrameRecord::Direction::Tx ? "TX" : "RX") << ',' << f.motor_id << ','
     << to_hex(f.payload) << ',';
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return std::string(buf);
  };
  if (f.direction == FrameRecord::Direction::Tx) {
    const auto c = decode_command(spec, f.payload);
    os << num(c.p_des) << ',' << num(c.v_des) << ',' << num(c.kp) << ',' << num(c.kd) << ',' << num(c.tau_ff);
  } else {
    const auto fb = decode_feedback(spec, f.payload);
    os << num(fb.position) << ',' << num(fb.velocity) << ",,," << num(fb.torque);
  }
  os << '\n';
}

}  // namespace mevius
