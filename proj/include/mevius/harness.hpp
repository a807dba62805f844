#pragma once

// Experiment runner: scenarios, metrics, the delay A/B study and replay.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mevius/episode_log.hpp"
#include "mevius/mlp.hpp"
#include "mevius/runtime.hpp"

namespace mevius {

// ---------------------------------------------------------------------------
// Phase lag

/// Lag of `cur` behind `ref` in seconds: argmax over [0, max_lag] of the
/// normalized cross-correlation, refined by a parabola through the peak and
/// its neighbours.
inline double phase_lag(const std::vector<double>& ref, const std::vector<double>& cur, double dt,
                        double max_lag = 0.2) {
  if (ref.size() != cur.size()) throw Error("phase_lag: series lengths differ");
  if (!(dt > 0.0)) throw Error("phase_lag: dt must be positive");
  const int n = static_cast<int>(ref.size());
  if (n < 3 || static_cast<double>(n) + 1e-9 < 2.0 / dt)
    throw Error("phase_lag: series shorter than 2/dt samples");
  auto demean = [](std::vector<double> v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double& x : v) x -= m;
    return v;
  };
  const std::vector<double> r = demean(ref), c = demean(cur);
  double vr = 0.0, vc = 0.0;
  for (int i = 0; i < n; ++i) {
    vr += r[i] * r[i];
    vc += c[i] * c[i];
  }
  if (!(vr > 0.0) || !(vc > 0.0)) throw Error("phase_lag: degenerate (zero-variance) series");

  const int kmax = std::min(n - 2, static_cast<int>(std::floor(max_lag / dt + 1e-9)));
  // Correlation of ref[i] with cur[i + k] over the overlap.
  auto corr = [&](int k) {
    double s = 0.0, a = 0.0, b = 0.0;
    const int lo = std::max(0, -k), hi = n - std::max(0, k);
    for (int i = lo; i < hi; ++i) {
      s += r[i] * c[i + k];
      a += r[i] * r[i];
      b += c[i + k] * c[i + k];
    }
    return (a > 0.0 && b > 0.0) ? s / std::sqrt(a * b) : 0.0;
  };
  int best = 0;
  double best_v = corr(0);
  for (int k = 1; k <= kmax; ++k) {
    const double v = corr(k);
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  const double y0 = corr(best - 1), y1 = best_v, y2 = corr(best + 1);
  const double den = y0 - 2.0 * y1 + y2;
  double offset = den < 0.0 ? 0.5 * (y0 - y2) / den : 0.0;
  offset = clamp(offset, -0.5, 0.5);
  return clamp((best + offset) * dt, 0.0, max_lag);
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  std::string label;
  std::uint64_t seed = 0;
  int delay_frames = 0;
  JointArray tracking_rms{};
  double phase_lag = 0.0;
  bool phase_lag_valid = false;
  double vibration = 0.0;
  double velocity_tracking_error = 0.0;
  bool survival = false;
  std::optional<double> fall_time;
  double distance = 0.0;
  double duration = 0.0;
  std::string termination;
  std::string fault;
  std::size_t frames = 0;

  bool operator==(const MetricsReport&) const = default;
};

/// Pure function of the log.
inline MetricsReport metrics_from_log(const EpisodeLog& log) {
  MetricsReport m;
  m.label = log.header.label;
  m.seed = log.header.seed;
  m.delay_frames = log.header.delay_frames;
  m.duration = log.header.duration;
  m.termination = termination_name(log.termination);
  m.fault = log.fault;
  m.frames = log.frames.size();
  m.survival = log.termination == Termination::Completed;
  if (log.termination == Termination::Fall || log.termination == Termination::Fault) m.fall_time = log.end_time;
  const auto& f = log.frames;
  if (f.empty()) return m;

  double vib = 0.0, vel = 0.0;
  for (const auto& fr : f) {
    for (int j = 0; j < kNumJoints; ++j) {
      const double e = fr.target[j] - fr.q[j];
      m.tracking_rms[j] += e * e;
      vib += fr.qd[j] * fr.qd[j];
    }
    const Vec3 v = fr.base_orientation.conjugate() * fr.base_lin_vel;
    vel += (fr.commands.head<2>() - v.head<2>()).squaredNorm();
  }
  const double n = static_cast<double>(f.size());
  for (double& x : m.tracking_rms) x = std::sqrt(x / n);
  m.vibration = std::sqrt(vib / (n * kNumJoints));
  m.velocity_tracking_error = std::sqrt(vel / n);
  const Vec3 d = f.back().base_position - log.header.initial_position;
  m.distance = d.head<2>().norm();

  // Lag skips the first second (start-up transient) when enough remains.
  const int j = log.header.lag_joint;
  const double dt = 1.0 / log.header.policy_rate;
  const std::size_t skip = f.size() * dt >= 1.0 + 2.0 ? static_cast<std::size_t>(std::llround(1.0 / dt)) : 0;
  if (j >= 0 && j < kNumJoints && static_cast<double>(f.size() - skip) + 1e-9 >= 2.0 / dt) {
    std::vector<double> ref, cur;
    for (std::size_t i = skip; i < f.size(); ++i) {
      ref.push_back(f[i].target[j]);
      cur.push_back(f[i].q[j]);
    }
    try {
      m.phase_lag = phase_lag(ref, cur, dt);
      m.phase_lag_valid = true;
    } catch (const Error&) {
      m.phase_lag = 0.0;
    }
  }
  return m;
}

inline nlohmann::ordered_json metrics_to_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["label"] = m.label;
  j["seed"] = m.seed;
  j["delay_frames"] = m.delay_frames;
  j["duration"] = m.duration;
  j["termination"] = m.termination;
  if (!m.fault.empty()) j["fault"] = m.fault;
  j["survival"] = m.survival;
  j["fall_time"] = m.fall_time ? nlohmann::ordered_json(*m.fall_time) : nlohmann::ordered_json(nullptr);
  j["frames"] = m.frames;
  j["tracking_rms"] = m.tracking_rms;
  j["phase_lag"] = m.phase_lag;
  j["phase_lag_valid"] = m.phase_lag_valid;
  j["vibration"] = m.vibration;
  j["velocity_tracking_error"] = m.velocity_tracking_error;
  j["distance"] = m.distance;
  return j;
}

inline std::string metrics_json_text(const MetricsReport& m) { return metrics_to_json(m).dump(2) + "\n"; }

inline void write_metrics_csv(std::ostream& os, const MetricsReport& m) {
  os << "label,seed,delay_frames,survival,fall_time,phase_lag,vibration,velocity_tracking_error,distance";
  for (int j = 0; j < kNumJoints; ++j) os << ",tracking_rms" << j;
  os << '\n';
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << m.label << ',' << m.seed << ',' << m.delay_frames << ',' << (m.survival ? 1 : 0) << ','
     << (m.fall_time ? num(*m.fall_time) : std::string()) << ',' << num(m.phase_lag) << ',' << num(m.vibration) << ','
     << num(m.velocity_tracking_error) << ',' << num(m.distance);
  for (double x : m.tracking_rms) os << ',' << num(x);
  os << '\n';
}

// ---------------------------------------------------------------------------
// Scenarios

struct SinusoidScript {
  bool enabled = false;
  int joint = 4;
  double amplitude = 0.3;
  double frequency = 1.0;
  /// Sends the reference velocity as v_des alongside p_des.
  bool feedforward = true;
};

struct Scenario {
  std::string name = "flat";
  TerrainKind terrain = TerrainKind::Flat;
  TerrainParams terrain_params;
  bool overlay_steps = false;
  std::vector<CommandSegment> commands;
  double duration = 10.0;
  /// Fixed channel latency replacing the bus default.
  std::optional<double> latency;
  int delay_frames = 0;
  std::uint64_t seed = 1;
  /// Base held in the air on a rig, no ground contact.
  bool suspended = false;
  double rig_height = 0.6;
  SinusoidScript script;
  int lag_joint = 4;
  double spawn_joint_noise = 0.0;
  double spawn_velocity_noise = 0.0;

  void validate() const {
    if (!(duration > 0.0)) throw ConfigError("scenario.duration: must be positive");
    for (const auto& c : commands)
      if (!(c.start >= 0.0 && c.start <= duration) || !c.command.allFinite())
        throw ConfigError("scenario.commands: segment starts must lie in [0, duration]");
    if (latency && !(*latency >= 0.0)) throw ConfigError("scenario.latency: must be non-negative");
    if (delay_frames < 0) throw ConfigError("scenario.delay_frames: must be non-negative");
    if (script.enabled && (script.joint < 0 || script.joint >= kNumJoints))
      throw ConfigError("scenario.script.joint: must lie in [0, 11]");
    if (lag_joint < 0 || lag_joint >= kNumJoints) throw ConfigError("scenario.lag_joint: must lie in [0, 11]");
    if (spawn_joint_noise < 0.0 || spawn_velocity_noise < 0.0)
      throw ConfigError("scenario: spawn noise must be non-negative");
  }
};

/// The lag experiment: suspended robot, 1 Hz sinusoid on the front-right
/// thigh, fixed channel latency.
inline Scenario sinusoid_scenario(double latency, double duration = 6.0) {
  Scenario s;
  s.name = "sinusoid";
  s.suspended = true;
  s.duration = duration;
  s.latency = latency;
  s.script.enabled = true;
  s.lag_joint = s.script.joint;
  return s;
}

struct ScenarioResult {
  MetricsReport report;
  EpisodeLog log;
};

inline RuntimeConfig scenario_runtime(RuntimeConfig rt, const Scenario& sc) {
  if (sc.latency) rt.bus.latency = LatencyModel::fixed(*sc.latency, rt.bus.latency.command_fraction);
  if (sc.suspended) {
    rt.sim.base_fixed = true;
    rt.sim.contact_enabled = false;
  }
  rt.record_log = true;
  return rt;
}

inline Terrain scenario_terrain(const Scenario& sc) {
  return sample_terrain(sc.terrain, sc.terrain_params, derive_seed(sc.seed, 0x7E11), sc.overlay_steps);
}

/// Writes log.bin, log.csv, metrics.json and metrics.csv into `dir`.
inline void write_run_outputs(const std::filesystem::path& dir, const ScenarioResult& r) {
  std::filesystem::create_directories(dir);
  save_episode_log(dir / "log.bin", r.log);
  {
    std::ofstream os(dir / "log.csv");
    write_episode_csv(os, r.log);
  }
  {
    std::ofstream os(dir / "metrics.json", std::ios::binary);
    os << metrics_json_text(r.report);
  }
  {
    std::ofstream os(dir / "metrics.csv");
    write_metrics_csv(os, r.report);
  }
}

/// Runs one scenario. A null policy with no script holds the default pose.
inline ScenarioResult run_scenario(const RobotDescription& desc, const RuntimeConfig& runtime, const Scenario& sc,
                                   const Mlp* policy) {
  sc.validate();
  auto terrain = std::make_shared<Terrain>(scenario_terrain(sc));
  Session session(desc, scenario_runtime(runtime, sc), terrain);
  if (sc.script.enabled) {
    const auto s = sc.script;
    const JointArray base = desc.default_pose;
    session.set_script([s, base](double t, JointArray& p, JointArray& v) {
      const double w = 2.0 * std::numbers::pi * s.frequency;
      p = base;
      v.fill(0.0);
      p[s.joint] += s.amplitude * std::sin(w * t);
      if (s.feedforward) v[s.joint] = s.amplitude * w * std::cos(w * t);
    });
  }
  Rng spawn_rng(derive_seed(sc.seed, 0x5EED));
  SimState init = perturbed_spawn(session.plant(), *terrain, spawn_rng, sc.spawn_joint_noise, sc.spawn_velocity_noise);
  if (sc.suspended) {
    init.base_position.z() = terrain->height(0.0, 0.0) + sc.rig_height;
    init.base_lin_vel.setZero();
    init.base_ang_vel.setZero();
  }
  ScenarioResult r;
  session.reset(init, sc.delay_frames, sc.seed, sc.duration);
  session.log().header.label = sc.name;
  session.log().header.lag_joint = sc.lag_joint;
  while (!session.done()) {
    const ObsVec obs = session.observe(command_at(sc.commands, session.time()));
    session.act(policy && !sc.script.enabled ? policy_forward(*policy, obs) : ActVec::Zero());
  }
  r.log = session.log();
  r.report = metrics_from_log(r.log);
  return r;
}

inline MetricsReport replay(const std::filesystem::path& log_path) { return metrics_from_log(load_episode_log(log_path)); }

// ---------------------------------------------------------------------------
// A/B delay study

struct AbStudyConfig {
  std::vector<int> delays{0, 1, 2, 3};
  int seeds = 20;
  std::uint64_t first_seed = 1000;
  double duration = 10.0;
  Vec3 command{0.5, 0.0, 0.0};
  double latency = 0.0;
  double spawn_joint_noise = 0.1;
  double spawn_velocity_noise = 0.2;
  TerrainKind terrain = TerrainKind::Flat;

  void validate() const {
    if (seeds < 1) throw ConfigError("ab_study.seeds: empty seed set");
    if (delays.empty()) throw ConfigError("ab_study.delays: empty delay set");
    for (int d : delays)
      if (d < 0) throw ConfigError("ab_study.delays: must be non-negative");
    if (!(duration > 0.0)) throw ConfigError("ab_study.duration: must be positive");
  }
};

struct AbCell {
  std::string policy;
  int delay = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<bool> survived;
  std::vector<double> vibration;
  double survival_rate = 0.0;
  double median_vibration = 0.0;
};

struct AbStudyResult {
  /// Delay-trained cells first, then baseline, each in `delays` order.
  std::vector<AbCell> cells;
  /// Per delay: share of seeds where the baseline vibrates strictly more.
  std::vector<std::pair<int, double>> baseline_worse_fraction;

  const AbCell& cell(const std::string& policy, int delay) const {
    for (const auto& c : cells)
      if (c.policy == policy && c.delay == delay) return c;
    throw Error("ab study: no cell for " + policy + " at delay " + std::to_string(delay));
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Scenario ab_scenario(const AbStudyConfig& cfg, int delay, std::uint64_t seed) {
  Scenario sc;
  sc.name = "ab_delay" + std::to_string(delay);
  sc.terrain = cfg.terrain;
  sc.commands = {CommandSegment{0.0, cfg.command}};
  sc.duration = cfg.duration;
  sc.latency = cfg.latency;
  sc.delay_frames = delay;
  sc.seed = seed;
  sc.spawn_joint_noise = cfg.spawn_joint_noise;
  sc.spawn_velocity_noise = cfg.spawn_velocity_noise;
  return sc;
}

inline AbStudyResult ab_delay_study(const RobotDescription& desc, const RuntimeConfig& runtime, const AbStudyConfig& cfg,
                                    const Mlp& delay_trained, const Mlp& baseline) {
  cfg.validate();
  RuntimeConfig rt = runtime;
  rt.max_delay_frames = std::max(rt.max_delay_frames, *std::max_element(cfg.delays.begin(), cfg.delays.end()));
  AbStudyResult out;
  for (const auto& [name, policy] : {std::pair<std::string, const Mlp*>{"delay_trained", &delay_trained},
                                     std::pair<std::string, const Mlp*>{"baseline", &baseline}}) {
    for (int d : cfg.delays) {
      AbCell c;
      c.policy = name;
      c.delay = d;
      int alive = 0;
      for (int i = 0; i < cfg.seeds; ++i) {
        const std::uint64_t seed = cfg.first_seed + static_cast<std::uint64_t>(i);
        const auto r = run_scenario(desc, rt, ab_scenario(cfg, d, seed), policy);
        c.seeds.push_back(seed);
        c.survived.push_back(r.report.survival);
        c.vibration.push_back(r.report.vibration);
        alive += r.report.survival ? 1 : 0;
      }
      c.survival_rate = static_cast<double>(alive) / cfg.seeds;
      c.median_vibration = median(c.vibration);
      out.cells.push_back(std::move(c));
    }
  }
  for (int d : cfg.delays) {
    const auto& a = out.cell("delay_trained", d);
    const auto& b = out.cell("baseline", d);
    int worse = 0;
    for (std::size_t i = 0; i < a.vibration.size(); ++i) worse += b.vibration[i] > a.vibration[i] ? 1 : 0;
    out.baseline_worse_fraction.emplace_back(d, static_cast<double>(worse) / cfg.seeds);
  }
  return out;
}

inline void write_ab_table(std::ostream& os, const AbStudyResult& r) {
  os << "policy,delay_frames,seeds,survival_rate,median_vibration\n";
  char buf[64];
  for (const auto& c : r.cells) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.9g", c.survival_rate, c.median_vibration);
    os << c.policy << ',' << c.delay << ',' << c.seeds.size() << ',' << buf << '\n';
  }
}

inline void write_ab_runs(std::ostream& os, const AbStudyResult& r) {
  os << "policy,delay_frames,seed,survived,vibration\n";
  char buf[40];
  for (const auto& c : r.cells)
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", c.vibration[i]);
      os << c.policy << ',' << c.delay << ',' << c.seeds[i] << ',' << (c.survived[i] ? 1 : 0) << ',' << buf << '\n';
    }
}

}  // namespace mevius
