#pragma once

// Bodies of the command-line subcommands. Each takes a resolved config tree
// and an output directory and returns the process exit status.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "mevius/config.hpp"

namespace mevius {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

/// Resolved config plus run status; no timestamps, so reruns are identical.
inline void write_manifest(const fs::path& dir, const std::string& command, const Json& cfg, const Json& result) {
  Json m;
  m["tool"] = "mevius";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["result"] = result;
  m["config"] = cfg;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// train

inline void write_curves_csv(std::ostream& os, const std::vector<CurveRow>& rows) {
  os << "iteration,mean_reward";
  for (const char* n : kRewardTermNames) os << ",term_" << n;
  os << ",mean_episode_length,episodes,surrogate,value_loss,entropy,approx_kl,action_std\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.iteration << ',' << num(r.mean_reward);
    for (double t : r.term_means) os << ',' << num(t);
    os << ',' << num(r.mean_episode_length) << ',' << r.episodes << ',' << num(r.surrogate) << ','
       << num(r.value_loss) << ',' << num(r.entropy) << ',' << num(r.approx_kl) << ',' << num(r.action_std) << '\n';
  }
}

inline void write_episodes_csv(std::ostream& os, const std::vector<EpisodeRecord>& eps) {
  os << "iteration,env,delay_frames,length,reward,termination\n";
  char buf[80];
  for (const auto& e : eps) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", e.length, e.reward);
    os << e.iteration << ',' << e.env << ',' << e.delay_frames << ',' << buf << ',' << termination_name(e.reason)
       << '\n';
  }
}

struct TrainOutcome {
  bool diverged = false;
  std::string error;
  int iterations = 0;
  int checkpoint_iteration = -1;
};

/// Runs training to completion, writing curves, episodes, checkpoints and the
/// manifest into `dir`. On divergence the last good checkpoint is kept.
inline TrainOutcome train_to_dir(const RobotDescription& desc, const TrainConfig& cfg, const fs::path& dir,
                                 const Json& resolved, std::ostream* progress = nullptr) {
  fs::create_directories(dir);
  Trainer trainer(desc, cfg);
  TrainOutcome out;
  auto checkpoint = [&](const ActorCritic& ac, int it) {
    save_mlp(dir / "policy.bin", ac.actor);
    save_mlp(dir / "critic.bin", ac.critic);
    out.checkpoint_iteration = it;
  };
  auto all_finite = [](const ActorCritic& ac) { return ac.flat().allFinite(); };
  checkpoint(trainer.actor_critic(), 0);
  try {
    for (int it = 0; it < cfg.iterations; ++it) {
      const CurveRow row = trainer.step();
      if (!all_finite(trainer.actor_critic()))
        throw TrainingDivergedError("training diverged at iteration " + std::to_string(it) +
                                    ": non-finite parameters");
      out.iterations = it + 1;
      if (cfg.checkpoint_every > 0 && out.iterations % cfg.checkpoint_every == 0)
        checkpoint(trainer.actor_critic(), out.iterations);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "iter %4d  reward %.5f  episode %.2f s  std %.3f  kl %.4f\n", row.iteration,
                      row.mean_reward, row.mean_episode_length, row.action_std, row.approx_kl);
        *progress << buf << std::flush;
      }
    }
    if (out.checkpoint_iteration != out.iterations) checkpoint(trainer.actor_critic(), out.iterations);
  } catch (const Error& e) {
    out.diverged = true;
    out.error = e.what();
  }
  {
    std::ofstream os(dir / "curves.csv");
    write_curves_csv(os, trainer.curves());
  }
  {
    std::ofstream os(dir / "episodes.csv");
    write_episodes_csv(os, trainer.episodes());
  }
  Json result = {{"status", out.diverged ? "diverged" : "completed"},
                 {"iterations", out.iterations},
                 {"checkpoint_iteration", out.checkpoint_iteration},
                 {"seed", cfg.seed}};
  if (out.diverged) result["error"] = out.error;
  write_manifest(dir, "train", resolved, result);
  return out;
}

// ---------------------------------------------------------------------------
// run / replay

struct RunOutcome {
  ScenarioResult result;
  bool ok = false;
};

/// A fall ends the run early but is a result, not a failure; a simulation
/// fault is a failure.
inline RunOutcome run_to_dir(const Json& resolved, const fs::path& dir) {
  const auto desc = description_from_config(resolved);
  const auto rt = runtime_from_config(resolved);
  const auto sc = scenario_from_config(resolved);
  const std::string policy_path = resolved.at("scenario").at("policy");
  std::optional<Mlp> policy;
  if (!policy_path.empty()) policy = load_mlp(policy_path);
  if (policy && (policy->input_size() != kObsDim || policy->output_size() != kActDim))
    throw ConfigError("scenario.policy: network shape does not match the observation/action sizes");
  RunOutcome out;
  out.result = run_scenario(desc, rt, sc, policy ? &*policy : nullptr);
  out.ok = out.result.log.termination != Termination::Fault;
  write_run_outputs(dir, out.result);
  Json result = {{"status", out.ok ? "completed" : "fault"},
                 {"termination", termination_name(out.result.log.termination)},
                 {"seed", sc.seed}};
  if (!out.result.log.fault.empty()) result["fault"] = out.result.log.fault;
  write_manifest(dir, "run", resolved, result);
  return out;
}

// ---------------------------------------------------------------------------
// ab-study

inline AbStudyResult ab_study_to_dir(const Json& resolved, const fs::path& dir) {
  const auto desc = description_from_config(resolved);
  const auto rt = runtime_from_config(resolved);
  const auto ab = ab_study_from_config(resolved);
  const std::string a = resolved.at("ab_study").at("delay_trained_policy");
  const std::string b = resolved.at("ab_study").at("baseline_policy");
  if (a.empty() || b.empty())
    throw ConfigError("ab_study: delay_trained_policy and baseline_policy are required");
  for (const auto& p : {a, b})
    if (!fs::exists(p)) throw ConfigError("ab_study: missing policy file " + p);
  const Mlp trained = load_mlp(a), baseline = load_mlp(b);
  fs::create_directories(dir);
  const auto r = ab_delay_study(desc, rt, ab, trained, baseline);
  {
    std::ofstream os(dir / "ab_table.csv");
    write_ab_table(os, r);
  }
  {
    std::ofstream os(dir / "ab_runs.csv");
    write_ab_runs(os, r);
  }
  Json cells = Json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"policy", c.policy},
                     {"delay_frames", c.delay},
                     {"survival_rate", c.survival_rate},
                     {"median_vibration", c.median_vibration}});
  Json worse = Json::object();
  for (const auto& [d, f] : r.baseline_worse_fraction) worse[std::to_string(d)] = f;
  write_manifest(dir, "ab-study", resolved,
                 {{"status", "completed"}, {"cells", cells}, {"baseline_vibrates_more_fraction", worse}});
  return r;
}

// ---------------------------------------------------------------------------
// codec-check

struct CodecFieldCheck {
  std::string name;
  std::uint32_t codes = 0;
  std::uint32_t roundtrip_failures = 0;
  double max_error_over_lsb = 0.0;
};

/// Every code of every field round-trips; random values stay within half an LSB.
inline std::vector<CodecFieldCheck> codec_check(const FrameCodecSpec& spec, std::uint64_t seed, int samples = 100000) {
  std::vector<CodecFieldCheck> out;
  const std::pair<const char*, const FieldRange*> fields[] = {{"position", &spec.position},
                                                              {"velocity", &spec.velocity},
                                                              {"kp", &spec.kp},
                                                              {"kd", &spec.kd},
                                                              {"torque", &spec.torque}};
  Rng rng(seed);
  for (const auto& [name, f] : fields) {
    CodecFieldCheck c{name, f->max_code() + 1, 0, 0.0};
    for (std::uint32_t code = 0; code <= f->max_code(); ++code)
      if (quantize(dequantize(code, *f), *f).code != code) ++c.roundtrip_failures;
    for (int i = 0; i < samples; ++i) {
      const double x = rng.uniform(f->min, f->max);
      c.max_error_over_lsb = std::max(c.max_error_over_lsb, std::abs(x - dequantize(quantize(x, *f).code, *f)) / f->lsb());
    }
    out.push_back(c);
  }
  return out;
}

inline bool codec_check_passed(const std::vector<CodecFieldCheck>& r) {
  for (const auto& c : r)
    if (c.roundtrip_failures != 0 || c.max_error_over_lsb > 0.5 * (1.0 + 1e-12)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// describe

inline Json describe(const Json& resolved) {
  const auto desc = description_from_config(resolved);
  const auto rt = runtime_from_config(resolved);
  Dynamics plant(desc, rt.sim);
  const Pose base{Vec3{0.0, 0.0, 0.0}, Quat::Identity()};
  const auto feet = forward_kinematics(desc, desc.default_pose, base);
  Json j;
  j["robot"] = description_to_json(desc);
  j["derived"] = {{"summed_mass", desc.summed_mass()},
                  {"weight", desc.summed_mass() * kGravity},
                  {"reflected_rotor_inertia", desc.reflected_rotor_inertia()}};
  Json fp = Json::array();
  for (const auto& p : feet) fp.push_back(Json::array({p.x(), p.y(), p.z()}));
  j["derived"]["default_pose_feet_in_base"] = fp;
  j["timing"] = {{"physics_dt", rt.physics_dt},
                 {"policy_period", 1.0 / rt.policy_rate},
                 {"bus_cycle_period", rt.bus.cycle_period()},
                 {"bus_frame_time", rt.bus.frame_time()},
                 {"bus_serialization_time", rt.bus.serialization_time()},
                 {"bus_budget_used", rt.bus.serialization_time() / rt.bus.cycle_period()},
                 {"latency_min", rt.bus.latency.min},
                 {"latency_max", rt.bus.latency.max},
                 {"command_fraction", rt.bus.latency.command_fraction},
                 {"ticks_per_second", kTicksPerSecond}};
  j["config"] = resolved;
  return j;
}

}  // namespace mevius
