#pragma once

// Deployable control loop: observation, policy, joint targets, and the
// 50 Hz policy / 150 Hz bus / 1 kHz plant schedule on a virtual clock.

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "mevius/bus.hpp"
#include "mevius/codec.hpp"
#include "mevius/common.hpp"
#include "mevius/dynamics.hpp"
#include "mevius/episode_log.hpp"
#include "mevius/mlp.hpp"
#include "mevius/robot_model.hpp"
#include "mevius/terrain.hpp"

namespace mevius {

inline constexpr int kObsDim = 48;
inline constexpr int kActDim = kNumJoints;

using ObsVec = Eigen::Matrix<double, kObsDim, 1>;
using ActVec = Eigen::Matrix<double, kActDim, 1>;

struct ObsScales {
  double lin_vel = 2.0;
  double ang_vel = 0.25;
  double dof_pos = 1.0;
  double dof_vel = 0.05;
  Vec3 commands{2.0, 2.0, 0.25};
};

/// Uniform noise half-widths in physical units, multiplied by `level`.
struct ObsNoise {
  bool enabled = false;
  double level = 1.0;
  double lin_vel = 0.1;
  double ang_vel = 0.2;
  double gravity = 0.05;
  double dof_pos = 0.01;
  double dof_vel = 1.5;
};

struct PdGains {
  double kp_hip = 50.0, kd_hip = 2.0;
  double kp_thigh = 50.0, kd_thigh = 2.0;
  double kp_calf = 30.0, kd_calf = 0.2;

  double kp(int joint) const {
    switch (joint % 3) {
      case 0: return kp_hip;
      case 1: return kp_thigh;
      default: return kp_calf;
    }
  }
  double kd(int joint) const {
    switch (joint % 3) {
      case 0: return kd_hip;
      case 1: return kd_thigh;
      default: return kd_calf;
    }
  }
};

struct FallThresholds {
  double min_height = 0.18;
  double max_tilt = 60.0 * std::numbers::pi / 180.0;
};

/// Roll and pitch (ZYX convention) of a base orientation.
inline std::pair<double, double> roll_pitch(const Quat& q) {
  const Mat3 r = q.toRotationMatrix();
  return {std::atan2(r(2, 1), r(2, 2)), std::asin(clamp(-r(2, 0), -1.0, 1.0))};
}

inline Vec3 projected_gravity(const Quat& q) { return q.conjugate() * Vec3{0.0, 0.0, -1.0}; }

/// Observation layout: lin vel (3), ang vel (3), projected gravity (3),
/// commands (3), joint offsets from the default pose (12), joint rates (12),
/// previous action (12). Velocities are expressed in the base frame.
inline ObsVec build_observation(const SimState& s, const RobotDescription& desc, const Vec3& commands,
                                const ActVec& prev_action, const ObsScales& scales = {},
                                const ObsNoise& noise = {}, Rng* rng = nullptr) {
  const Quat inv = s.base_orientation.conjugate();
  ObsVec o;
  o.segment<3>(0) = (inv * s.base_lin_vel) * scales.lin_vel;
  o.segment<3>(3) = (inv * s.base_ang_vel) * scales.ang_vel;
  o.segment<3>(6) = projected_gravity(s.base_orientation);
  o.segment<3>(9) = commands.cwiseProduct(scales.commands);
  for (int j = 0; j < kNumJoints; ++j) {
    o[12 + j] = (s.q[j] - desc.default_pose[j]) * scales.dof_pos;
    o[24 + j] = s.qd[j] * scales.dof_vel;
  }
  o.segment<12>(36) = prev_action;
  if (noise.enabled && rng) {
    auto add = [&](int from, int n, double width) {
      for (int i = from; i < from + n; ++i) o[i] += rng->uniform(-1.0, 1.0) * width * noise.level;
    };
    add(0, 3, noise.lin_vel * scales.lin_vel);
    add(3, 3, noise.ang_vel * scales.ang_vel);
    add(6, 3, noise.gravity);
    add(12, 12, noise.dof_pos * scales.dof_pos);
    add(24, 12, noise.dof_vel * scales.dof_vel);
  }
  return o;
}

inline ActVec policy_forward(const Mlp& policy, const ObsVec& obs) {
  if (policy.input_size() != kObsDim || policy.output_size() != kActDim)
    throw ConfigError("policy: expected 48 inputs and 12 outputs, got " + std::to_string(policy.input_size()) +
                      " and " + std::to_string(policy.output_size()));
  return policy.forward(VecX(obs));
}

inline JointArray action_to_targets(const ActVec& a, const RobotDescription& desc, double action_scale = 0.25) {
  JointArray t{};
  for (int j = 0; j < kNumJoints; ++j)
    t[j] = clamp(desc.default_pose[j] + action_scale * a[j], desc.joint_limits[j].lower, desc.joint_limits[j].upper);
  return t;
}

// ---------------------------------------------------------------------------
// Virtual clock

/// 3 MHz ticks: 1 ms, 1/150 s, 20 ms and the 130-bit frame time at 1 Mbit/s
/// are all whole numbers of ticks.
using Tick = std::int64_t;
inline constexpr Tick kTicksPerSecond = 3'000'000;

inline Tick to_ticks(double seconds) { return static_cast<Tick>(std::llround(seconds * kTicksPerSecond)); }
inline double to_seconds(Tick t) { return static_cast<double>(t) / kTicksPerSecond; }

/// Processing order for events sharing a tick.
enum class EventKind : std::uint8_t {
  CommandArrival = 0,
  FeedbackArrival = 1,
  FeedbackSample = 2,
  Policy = 3,
  Bus = 4,
  Physics = 5,
};

struct Event {
  Tick tick = 0;
  EventKind kind = EventKind::Physics;
  std::uint64_t seq = 0;
  int motor = 0;

  bool before(const Event& o) const {
    if (tick != o.tick) return tick < o.tick;
    if (kind != o.kind) return kind < o.kind;
    return seq < o.seq;
  }
};

class EventQueue {
 public:
  void push(Tick tick, EventKind kind, int motor = 0) { heap_.push(Event{tick, kind, next_seq_++, motor}); }
  bool empty() const { return heap_.empty(); }
  const Event& top() const { return heap_.top(); }
  Event pop() {
    Event e = heap_.top();
    heap_.pop();
    return e;
  }
  void clear() {
    heap_ = {};
    next_seq_ = 0;
  }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const { return b.before(a); }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

// ---------------------------------------------------------------------------
// Session

struct RuntimeConfig {
  double physics_dt = 1e-3;
  double policy_rate = 50.0;
  BusModel bus;
  FrameCodecSpec codec;
  SimParams sim;
  PdGains gains;
  double action_scale = 0.25;
  ObsScales obs_scales;
  ObsNoise obs_noise;
  FallThresholds fall;
  int max_delay_frames = 8;
  bool record_log = true;

  Tick physics_ticks() const { return checked_ticks(physics_dt, "runtime.physics_dt"); }
  Tick policy_ticks() const { return checked_ticks(1.0 / policy_rate, "runtime.policy_rate"); }
  Tick bus_ticks() const { return checked_ticks(bus.cycle_period(), "bus.cycle_rate"); }

  void validate() const {
    if (!(physics_dt > 0.0 && physics_dt <= 5e-3)) throw ConfigError("runtime.physics_dt: must lie in (0, 5e-3]");
    if (!(policy_rate > 0.0)) throw ConfigError("runtime.policy_rate: must be positive");
    if (!(bus.cycle_rate > 0.0)) throw ConfigError("bus.cycle_rate: must be positive");
    physics_ticks();
    policy_ticks();
    bus_ticks();
    bus.validate();
    codec.validate();
    sim.validate();
    if (!(action_scale > 0.0)) throw ConfigError("runtime.action_scale: must be positive");
    if (max_delay_frames < 0) throw ConfigError("runtime.max_delay_frames: must be non-negative");
  }

 private:
  static Tick checked_ticks(double seconds, const char* field) {
    const double t = seconds * kTicksPerSecond;
    const Tick r = static_cast<Tick>(std::llround(t));
    if (r <= 0 || std::abs(t - static_cast<double>(r)) > 1e-6)
      throw ConfigError(std::string(field) + ": period is not a whole number of scheduler ticks");
    return r;
  }
};

/// Targets supplied directly at bus rate instead of by the policy.
using ScriptedTargets = std::function<void(double t, JointArray& p_des, JointArray& v_des)>;

/// Base spawn over arbitrary terrain: default pose, lowest foot touching the
/// ground under it.
inline SimState spawn_state(const Dynamics& plant, const Terrain& terrain, double clearance = 0.0) {
  SimState s = plant.standing_state();
  s.base_position.z() = 0.0;
  double lift = -1e300;
  for (const auto& f : forward_kinematics(plant.description(), s.q, s.pose()))
    lift = std::max(lift, terrain.height(f.x(), f.y()) - f.z());
  s.base_position.z() = lift + clearance;
  return s;
}

/// Spawn with uniform joint-angle and base-velocity perturbations; the base is
/// lifted so no foot starts below the ground.
inline SimState perturbed_spawn(const Dynamics& plant, const Terrain& terrain, Rng& rng, double joint_noise,
                                double velocity_noise) {
  const auto& desc = plant.description();
  SimState s = spawn_state(plant, terrain);
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& lim = desc.joint_limits[j];
    s.q[j] = clamp(s.q[j] + rng.uniform(-joint_noise, joint_noise), lim.lower, lim.upper);
  }
  const double vn = velocity_noise;
  s.base_lin_vel = Vec3{rng.uniform(-vn, vn), rng.uniform(-vn, vn), 0.0};
  s.base_ang_vel = Vec3{rng.uniform(-vn, vn), rng.uniform(-vn, vn), rng.uniform(-vn, vn)};
  double lift = 0.0;
  for (const auto& f : forward_kinematics(desc, s.q, s.pose()))
    lift = std::max(lift, terrain.height(f.x(), f.y()) - f.z());
  s.base_position.z() += lift;
  return s;
}

/// One robot on one bus. Advances in policy periods: observe() at the current
/// policy tick, then act() runs the queue up to the next policy tick.
class Session {
 public:
  Session(RobotDescription desc, RuntimeConfig cfg, std::shared_ptr<const Terrain> terrain)
      : desc_(std::move(desc)), cfg_(std::move(cfg)), terrain_(std::move(terrain)), plant_(desc_, cfg_.sim) {
    cfg_.validate();
    if (!terrain_) throw ConfigError("session: terrain required");
    physics_ticks_ = cfg_.physics_ticks();
    policy_ticks_ = cfg_.policy_ticks();
    bus_ticks_ = cfg_.bus_ticks();
  }

  /// Starts an episode at t = 0 from `initial`. Motors start out holding the
  /// default pose and the host's first feedback snapshot is the initial state
  /// stamped one bus cycle before t = 0.
  void reset(const SimState& initial, int delay_frames, std::uint64_t seed, double duration) {
    if (delay_frames < 0 || delay_frames > cfg_.max_delay_frames)
      throw ConfigError("delay_frames must lie in [0, " + std::to_string(cfg_.max_delay_frames) + "]");
    if (!(duration > 0.0)) throw ConfigError("duration must be positive");
    state_ = initial;
    state_.time = 0.0;
    now_ = 0;
    end_tick_ = to_ticks(duration);
    policy_index_ = 0;
    queue_.clear();
    bus_ = std::make_unique<BusScheduler>(cfg_.bus, derive_seed(seed, 1));
    noise_rng_ = Rng(derive_seed(seed, 2));
    delay_ = ActionDelayBuffer<ActVec>(cfg_.max_delay_frames, ActVec::Zero());
    delay_.reset(delay_frames, ActVec::Zero());
    prev_action_.setZero();
    termination_ = Termination::Running;
    fault_.clear();
    end_time_ = 0.0;
    torque_cut_ = false;

    const JointArray hold = action_to_targets(ActVec::Zero(), desc_, cfg_.action_scale);
    for (int j = 0; j < kNumJoints; ++j) {
      host_command_[j] = make_command(j, hold[j], 0.0);
      servo_[j] = ServoState{};
      servo_[j].last_command = decode_command(cfg_.codec, encode_command(cfg_.codec, host_command_[j]).payload);
      servo_[j].has_command = true;
      pending_commands_[j].clear();
      pending_feedback_[j].clear();
      feedback_due_[j].clear();
      snapshot_q_[j] = initial.q[j];
      snapshot_qd_[j] = initial.qd[j];
      snapshot_stamp_[j] = -bus_ticks_;
    }
    host_source_ = -1;
    last_sent_source_ = -1;
    torques_.fill(0.0);
    contact_forces_ = zero_forces();

    log_ = EpisodeLog{};
    log_.header.seed = seed;
    log_.header.delay_frames = delay_frames;
    log_.header.duration = duration;
    log_.header.physics_dt = cfg_.physics_dt;
    log_.header.policy_rate = cfg_.policy_rate;
    log_.header.bus_rate = cfg_.bus.cycle_rate;
    log_.header.latency_min = cfg_.bus.latency.min;
    log_.header.latency_max = cfg_.bus.latency.max;
    log_.header.latency_command_fraction = cfg_.bus.latency.command_fraction;
    log_.header.terrain_kind = static_cast<std::uint32_t>(terrain_->kind);
    log_.header.initial_position = initial.base_position;

    queue_.push(0, EventKind::Bus);
    queue_.push(0, EventKind::Physics);
  }

  void set_script(ScriptedTargets script) { script_ = std::move(script); }
  void set_torque_cut(bool cut) { torque_cut_ = cut; }

  /// Observation at the current policy tick from the latest feedback
  /// snapshot and the base sensor.
  ObsVec observe(const Vec3& commands) {
    commands_ = commands;
    SimState view = state_;
    view.q = snapshot_q_;
    view.qd = snapshot_qd_;
    return build_observation(view, desc_, commands, prev_action_, cfg_.obs_scales, cfg_.obs_noise, &noise_rng_);
  }

  /// Applies `action` at the current policy tick and advances to the next one.
  /// Returns false once the episode has ended.
  bool act(const ActVec& action) {
    if (done()) throw Error("session: episode already ended");
    const ActVec applied = delay_.push_pop(action);
    prev_action_ = action;
    const JointArray target = action_to_targets(applied, desc_, cfg_.action_scale);
    if (!script_) {
      for (int j = 0; j < kNumJoints; ++j) host_command_[j] = make_command(j, target[j], 0.0);
      host_source_ = policy_index_;
    }
    if (cfg_.record_log) record_policy_frame(action);
    ++policy_index_;
    const Tick next = static_cast<Tick>(policy_index_) * policy_ticks_;
    run_until(std::min(next, end_tick_));
    if (termination_ == Termination::Running && now_ >= end_tick_) finish(Termination::Completed, "");
    return !done();
  }

  bool done() const { return termination_ != Termination::Running; }
  Termination termination() const { return termination_; }
  const std::string& fault() const { return fault_; }
  double time() const { return to_seconds(now_); }
  double end_time() const { return end_time_; }
  int policy_index() const { return policy_index_; }
  int delay_frames() const { return delay_.delay(); }

  const SimState& state() const { return state_; }
  const JointArray& torques() const { return torques_; }
  const FootForces& contact_forces() const { return contact_forces_; }
  const ActVec& prev_action() const { return prev_action_; }

  const RobotDescription& description() const { return desc_; }
  const RuntimeConfig& config() const { return cfg_; }
  const Dynamics& plant() const { return plant_; }
  const Terrain& terrain() const { return *terrain_; }
  std::shared_ptr<const Terrain> terrain_ptr() const { return terrain_; }

  EpisodeLog& log() { return log_; }
  const EpisodeLog& log() const { return log_; }

  bool fell(const SimState& s) const {
    const double ground = terrain_->height(s.base_position.x(), s.base_position.y());
    if (s.base_position.z() - ground < cfg_.fall.min_height) return true;
    const auto [roll, pitch] = roll_pitch(s.base_orientation);
    return std::abs(roll) > cfg_.fall.max_tilt || std::abs(pitch) > cfg_.fall.max_tilt;
  }

 private:
  struct PendingCommand {
    MotorCommand command;
    int source = -1;
    Tick arrival = 0;
    /// First bus cycle carrying this policy tick's targets.
    bool first = false;
  };
  struct PendingFeedback {
    FeedbackPayload payload{};
    Tick sampled = 0;
  };

  MotorCommand make_command(int j, double p, double v) const {
    return MotorCommand{p, v, cfg_.gains.kp(j), cfg_.gains.kd(j), 0.0};
  }

  void run_until(Tick next_policy) {
    while (!queue_.empty() && !done()) {
      const Event& e = queue_.top();
      if (e.tick > next_policy || (e.tick == next_policy && e.kind >= EventKind::Policy)) break;
      const Event ev = queue_.pop();
      now_ = ev.tick;
      dispatch(ev);
    }
    if (!done()) now_ = next_policy;
  }

  void dispatch(const Event& e) {
    switch (e.kind) {
      case EventKind::Physics: on_physics(); break;
      case EventKind::Bus: on_bus(); break;
      case EventKind::CommandArrival: on_command_arrival(e.motor); break;
      case EventKind::FeedbackSample: on_feedback_sample(e.motor); break;
      case EventKind::FeedbackArrival: on_feedback_arrival(e.motor); break;
      case EventKind::Policy: break;
    }
  }

  void on_physics() {
    for (int j = 0; j < kNumJoints; ++j) {
      servo_[j].rotor_position = state_.q[j];
      servo_[j].rotor_velocity = state_.qd[j];
      servo_[j].torque_cut = torque_cut_;
      torques_[j] = servo_update(servo_[j], desc_.torque_limit);
    }
    StepInfo info;
    try {
      state_ = plant_.step(state_, torques_, terrain_.get(), cfg_.physics_dt, &info);
    } catch (const SimulationFault& f) {
      finish(Termination::Fault, f.quantity);
      return;
    }
    state_.time = to_seconds(now_ + physics_ticks_);
    contact_forces_ = info.contact_forces;
    if (fell(state_)) {
      end_time_ = state_.time;
      termination_ = Termination::Fall;
      log_.termination = termination_;
      log_.end_time = end_time_;
      return;
    }
    queue_.push(now_ + physics_ticks_, EventKind::Physics);
  }

  void on_bus() {
    const CycleSchedule cs = bus_->next_cycle(to_seconds(now_));
    JointArray p{}, v{};
    if (script_) {
      script_(to_seconds(now_), p, v);
      for (int j = 0; j < kNumJoints; ++j) {
        p[j] = clamp(p[j], desc_.joint_limits[j].lower, desc_.joint_limits[j].upper);
        host_command_[j] = make_command(j, p[j], v[j]);
      }
      host_source_ = -1;
    }
    const bool first = host_source_ >= 0 && host_source_ != last_sent_source_;
    last_sent_source_ = host_source_;
    BusFrame bf;
    bf.tick = now_;
    bf.source = host_source_;
    for (int j = 0; j < kNumJoints; ++j) {
      const auto& slot = cs.slots[j];
      const auto enc = encode_command(cfg_.codec, host_command_[j]);
      PendingCommand pc{decode_command(cfg_.codec, enc.payload), host_source_, to_ticks(slot.command_arrival), first};
      pending_commands_[j].push_back(pc);
      queue_.push(pc.arrival, EventKind::CommandArrival, j);
      queue_.push(to_ticks(slot.tx_end), EventKind::FeedbackSample, j);
      feedback_due_[j].push_back(to_ticks(slot.feedback_arrival));
      bf.p_des[j] = host_command_[j].p_des;
      bf.kp[j] = host_command_[j].kp;
      bf.kd[j] = host_command_[j].kd;
      bf.command_arrival[j] = to_seconds(pc.arrival);
    }
    if (cfg_.record_log) log_.bus.push_back(bf);
    queue_.push(now_ + bus_ticks_, EventKind::Bus);
  }

  void on_command_arrival(int j) {
    PendingCommand pc = pending_commands_[j].front();
    pending_commands_[j].pop_front();
    servo_[j].last_command = pc.command;
    servo_[j].has_command = true;
    if (cfg_.record_log && pc.first && pc.source < static_cast<int>(log_.frames.size())) {
      auto& f = log_.frames[static_cast<std::size_t>(pc.source)];
      // The plant picks the command up at the next physics step boundary.
      const Tick effect = (now_ + physics_ticks_ - 1) / physics_ticks_ * physics_ticks_;
      if (!(f.command_arrival >= 0.0)) f.command_arrival = to_seconds(now_);
      else f.command_arrival = std::max(f.command_arrival, to_seconds(now_));
      f.command_effect = std::max(f.command_effect, to_seconds(effect));
    }
  }

  void on_feedback_sample(int j) {
    MotorFeedback fb{j + 1, state_.q[j], state_.qd[j], torques_[j]};
    PendingFeedback pf{encode_feedback(cfg_.codec, fb), now_};
    pending_feedback_[j].push_back(pf);
    queue_.push(feedback_due_[j].front(), EventKind::FeedbackArrival, j);
    feedback_due_[j].pop_front();
  }

  void on_feedback_arrival(int j) {
    PendingFeedback pf = pending_feedback_[j].front();
    pending_feedback_[j].pop_front();
    const MotorFeedback fb = decode_feedback(cfg_.codec, pf.payload);
    snapshot_q_[j] = fb.position;
    snapshot_qd_[j] = fb.velocity;
    snapshot_stamp_[j] = pf.sampled;
  }

  void record_policy_frame(const ActVec& action) {
    PolicyFrame f;
    f.tick = now_;
    f.time = to_seconds(now_);
    f.commands = commands_;
    for (int j = 0; j < kNumJoints; ++j) {
      f.action[j] = action[j];
      f.target[j] = host_command_[j].p_des;
      f.kp[j] = host_command_[j].kp;
      f.kd[j] = host_command_[j].kd;
      f.q[j] = state_.q[j];
      f.qd[j] = state_.qd[j];
      f.torque[j] = torques_[j];
    }
    f.base_position = state_.base_position;
    f.base_orientation = state_.base_orientation;
    f.base_lin_vel = state_.base_lin_vel;
    f.base_ang_vel = state_.base_ang_vel;
    Tick oldest = snapshot_stamp_[0];
    for (Tick t : snapshot_stamp_) oldest = std::min(oldest, t);
    f.snapshot_time = to_seconds(oldest);
    for (int l = 0; l < kNumLegs; ++l) f.contacts[l] = state_.contact_flags[l];
    if (script_) {
      // Scripted targets are a function of time; log the value at this tick.
      JointArray p{}, v{};
      script_(to_seconds(now_), p, v);
      for (int j = 0; j < kNumJoints; ++j)
        f.target[j] = clamp(p[j], desc_.joint_limits[j].lower, desc_.joint_limits[j].upper);
      f.scripted = true;
    }
    log_.frames.push_back(f);
  }

  void finish(Termination t, const std::string& fault) {
    termination_ = t;
    fault_ = fault;
    end_time_ = to_seconds(now_);
    log_.termination = t;
    log_.fault = fault;
    log_.end_time = end_time_;
  }

  RobotDescription desc_;
  RuntimeConfig cfg_;
  std::shared_ptr<const Terrain> terrain_;
  Dynamics plant_;
  Tick physics_ticks_ = 0, policy_ticks_ = 0, bus_ticks_ = 0;

  SimState state_;
  Tick now_ = 0;
  Tick end_tick_ = 0;
  int policy_index_ = 0;
  EventQueue queue_;
  std::unique_ptr<BusScheduler> bus_;
  Rng noise_rng_;
  ActionDelayBuffer<ActVec> delay_{8, ActVec::Zero()};
  ActVec prev_action_ = ActVec::Zero();
  Vec3 commands_ = Vec3::Zero();
  ScriptedTargets script_;
  bool torque_cut_ = false;

  std::array<MotorCommand, kNumJoints> host_command_{};
  int host_source_ = -1;
  int last_sent_source_ = -1;
  std::array<ServoState, kNumJoints> servo_{};
  std::array<std::deque<PendingCommand>, kNumJoints> pending_commands_;
  std::array<std::deque<PendingFeedback>, kNumJoints> pending_feedback_;
  std::array<std::deque<Tick>, kNumJoints> feedback_due_;
  JointArray snapshot_q_{}, snapshot_qd_{};
  std::array<Tick, kNumJoints> snapshot_stamp_{};
  JointArray torques_{};
  FootForces contact_forces_ = zero_forces();

  Termination termination_ = Termination::Running;
  std::string fault_;
  double end_time_ = 0.0;
  EpisodeLog log_;
};

/// Command profile: piecewise constant (v_x, v_y, yaw rate) segments.
struct CommandSegment {
  double start = 0.0;
  Vec3 command = Vec3::Zero();
};

inline Vec3 command_at(const std::vector<CommandSegment>& profile, double t) {
  Vec3 c = Vec3::Zero();
  for (const auto& s : profile)
    if (s.start <= t) c = s.command;
  return c;
}

/// Runs one episode to completion. A null policy emits zero actions.
inline EpisodeLog run_episode(Session& session, const Mlp* policy, const std::vector<CommandSegment>& profile,
                              const SimState& initial, int delay_frames, double duration, std::uint64_t seed) {
  session.reset(initial, delay_frames, seed, duration);
  while (!session.done()) {
    const ObsVec obs = session.observe(command_at(profile, session.time()));
    const ActVec a = policy ? policy_forward(*policy, obs) : ActVec::Zero();
    session.act(a);
  }
  return session.log();
}

}  // namespace mevius
