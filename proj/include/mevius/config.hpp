#pragma once

// Configuration tree: built-in defaults, strict merging of user files and
// dotted-key overrides, and conversion into the typed configs.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mevius/harness.hpp"
#include "mevius/trainer.hpp"

namespace mevius {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json field_range_json(const FieldRange& f) { return {{"min", f.min}, {"max", f.max}, {"bits", f.bits}}; }

inline Json terrain_params_json(const TerrainParams& p) {
  return {{"slope_deg", p.slope_deg},
          {"step_height", p.step_height},
          {"step_period", p.step_period},
          {"step_start", p.step_start},
          {"roughness", p.roughness},
          {"roughness_wavelength", p.roughness_wavelength},
          {"friction", p.friction},
          {"resolution", p.resolution},
          {"x_min", p.x_min},
          {"x_max", p.x_max},
          {"y_min", p.y_min},
          {"y_max", p.y_max}};
}

inline Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

}  // namespace detail

/// Every key the tools accept, with its default value.
inline Json default_config() {
  const RuntimeConfig rt;
  const TrainConfig tr;
  const Scenario sc;
  const AbStudyConfig ab;
  Json j;
  j["robot"] = {{"description", ""}};

  Json gains = {{"kp_hip", rt.gains.kp_hip},     {"kd_hip", rt.gains.kd_hip},   {"kp_thigh", rt.gains.kp_thigh},
                {"kd_thigh", rt.gains.kd_thigh}, {"kp_calf", rt.gains.kp_calf}, {"kd_calf", rt.gains.kd_calf}};
  Json scales = {{"lin_vel", rt.obs_scales.lin_vel},
                 {"ang_vel", rt.obs_scales.ang_vel},
                 {"dof_pos", rt.obs_scales.dof_pos},
                 {"dof_vel", rt.obs_scales.dof_vel},
                 {"commands", detail::vec3_json(rt.obs_scales.commands)}};
  Json noise = {{"enabled", rt.obs_noise.enabled}, {"level", rt.obs_noise.level},
                {"lin_vel", rt.obs_noise.lin_vel}, {"ang_vel", rt.obs_noise.ang_vel},
                {"gravity", rt.obs_noise.gravity}, {"dof_pos", rt.obs_noise.dof_pos},
                {"dof_vel", rt.obs_noise.dof_vel}};
  j["runtime"] = {{"physics_dt", rt.physics_dt},
                  {"policy_rate", rt.policy_rate},
                  {"action_scale", rt.action_scale},
                  {"max_delay_frames", rt.max_delay_frames},
                  {"gains", gains},
                  {"obs_scales", scales},
                  {"obs_noise", noise},
                  {"fall", {{"min_height", rt.fall.min_height}, {"max_tilt_deg", rt.fall.max_tilt * 180.0 / std::numbers::pi}}}};

  j["bus"] = {{"bitrate", rt.bus.bitrate},
              {"frame_overhead_bits", rt.bus.frame_overhead_bits},
              {"cycle_rate", rt.bus.cycle_rate},
              {"motor_count", rt.bus.motor_count},
              {"latency",
               {{"kind", "uniform"},
                {"min", rt.bus.latency.min},
                {"max", rt.bus.latency.max},
                {"command_fraction", rt.bus.latency.command_fraction}}}};

  j["codec"] = {{"position", detail::field_range_json(rt.codec.position)},
                {"velocity", detail::field_range_json(rt.codec.velocity)},
                {"kp", detail::field_range_json(rt.codec.kp)},
                {"kd", detail::field_range_json(rt.codec.kd)},
                {"torque", detail::field_range_json(rt.codec.torque)}};

  j["sim"] = {{"gravity", detail::vec3_json(rt.sim.gravity)},
              {"contact_stiffness", rt.sim.contact_stiffness},
              {"contact_damping", rt.sim.contact_damping},
              {"friction_velocity", rt.sim.friction_velocity},
              {"joint_damping", rt.sim.joint_damping},
              {"joint_coulomb", rt.sim.joint_coulomb},
              {"coulomb_velocity", rt.sim.coulomb_velocity},
              {"include_rotor_inertia", rt.sim.include_rotor_inertia}};

  Json weights;
  for (int i = 0; i < kNumRewardTerms; ++i) weights[kRewardTermNames[static_cast<std::size_t>(i)]] = tr.rewards.w[static_cast<std::size_t>(i)];
  Json terrains = Json::array();
  for (auto k : tr.terrains) terrains.push_back(terrain_kind_name(k));
  j["train"] = {{"num_envs", tr.num_envs},
                {"rollout_length", tr.rollout_length},
                {"iterations", tr.iterations},
                {"gamma", tr.gamma},
                {"lambda", tr.lambda},
                {"clip", tr.ppo.clip},
                {"value_coef", tr.ppo.value_coef},
                {"entropy_coef", tr.ppo.entropy_coef},
                {"max_grad_norm", tr.ppo.max_grad_norm},
                {"learning_rate", tr.ppo.learning_rate},
                {"epochs", tr.ppo.epochs},
                {"minibatches", tr.ppo.minibatches},
                {"init_noise_std", tr.init_noise_std},
                {"actor_hidden", tr.actor_hidden},
                {"critic_hidden", tr.critic_hidden},
                {"delay_randomization", false},
                {"delay_min", tr.delay_min},
                {"delay_max", tr.delay_max},
                {"channel_latency", 0.0},
                {"reward_weights", weights},
                {"tracking_sigma", tr.rewards.tracking_sigma},
                {"only_positive_rewards", tr.rewards.only_positive},
                {"commands",
                 {{"vx", {tr.commands.vx_min, tr.commands.vx_max}},
                  {"vy", {tr.commands.vy_min, tr.commands.vy_max}},
                  {"wz", {tr.commands.wz_min, tr.commands.wz_max}}}},
                {"episode_length", tr.episode_length},
                {"command_resample_time", tr.command_resample_time},
                {"spawn_joint_noise", tr.spawn_joint_noise},
                {"spawn_velocity_noise", tr.spawn_velocity_noise},
                {"terrains", terrains},
                {"terrain", detail::terrain_params_json(tr.terrain_params)},
                {"seed", tr.seed},
                {"workers", tr.workers},
                {"checkpoint_every", tr.checkpoint_every}};

  j["scenario"] = {{"name", sc.name},
                   {"terrain", terrain_kind_name(sc.terrain)},
                   {"terrain_params", detail::terrain_params_json(sc.terrain_params)},
                   {"overlay_steps", sc.overlay_steps},
                   {"commands", Json::array({{{"start", 0.0}, {"vx", 0.0}, {"vy", 0.0}, {"wz", 0.0}}})},
                   {"duration", sc.duration},
                   {"latency", nullptr},
                   {"delay_frames", sc.delay_frames},
                   {"seed", sc.seed},
                   {"suspended", sc.suspended},
                   {"rig_height", sc.rig_height},
                   {"script",
                    {{"enabled", sc.script.enabled},
                     {"joint", sc.script.joint},
                     {"amplitude", sc.script.amplitude},
                     {"frequency", sc.script.frequency},
                     {"feedforward", sc.script.feedforward}}},
                   {"lag_joint", sc.lag_joint},
                   {"spawn_joint_noise", sc.spawn_joint_noise},
                   {"spawn_velocity_noise", sc.spawn_velocity_noise},
                   {"policy", ""}};

  j["ab_study"] = {{"delays", ab.delays},
                   {"seeds", ab.seeds},
                   {"first_seed", ab.first_seed},
                   {"duration", ab.duration},
                   {"command", detail::vec3_json(ab.command)},
                   {"latency", ab.latency},
                   {"spawn_joint_noise", ab.spawn_joint_noise},
                   {"spawn_velocity_noise", ab.spawn_velocity_noise},
                   {"terrain", terrain_kind_name(ab.terrain)},
                   {"delay_trained_policy", ""},
                   {"baseline_policy", ""}};
  return j;
}

// ---------------------------------------------------------------------------
// Merging

namespace detail {

inline bool same_kind(const Json& a, const Json& b) {
  if (a.is_null()) return true;  // optional slot, any value accepted
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

inline void merge_into(Json& base, const Json& overlay, const std::string& path) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_into(slot, it.value(), key);
      continue;
    }
    if (!same_kind(slot, it.value()) && !it.value().is_null())
      throw ConfigError("config key '" + key + "': expected " + std::string(slot.type_name()) + ", got " +
                        it.value().type_name());
    slot = it.value();
  }
}

}  // namespace detail

/// Overlays `user` onto `base`; unknown keys and type changes are errors.
inline void merge_config(Json& base, const Json& user) {
  if (!user.is_object()) throw ConfigError("config root must be an object");
  detail::merge_into(base, user, "");
}

/// "a.b.c=value"; the value is parsed as JSON, falling back to a string.
inline void apply_override(Json& cfg, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "': expected dotted.key=value");
  const std::string key = text.substr(0, eq), raw = text.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;
  }
  Json overlay = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) throw ConfigError("override '" + text + "': empty key segment");
    parts.push_back(p);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = Json{{*it, overlay}};
  merge_config(cfg, overlay);
}

inline Json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("parse failure in " + path.string() + ": " + e.what());
  }
}

inline Json resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json cfg = default_config();
  if (!file.empty()) merge_config(cfg, load_config_file(file));
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

// ---------------------------------------------------------------------------
// Typed views

namespace detail {

inline Vec3 vec3_from(const Json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(key) + ": expected 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline FieldRange field_range_from(const Json& j) {
  return {j.at("min").get<double>(), j.at("max").get<double>(), j.at("bits").get<int>()};
}

inline TerrainParams terrain_params_from(const Json& j) {
  TerrainParams p;
  p.slope_deg = j.at("slope_deg");
  p.step_height = j.at("step_height");
  p.step_period = j.at("step_period");
  p.step_start = j.at("step_start");
  p.roughness = j.at("roughness");
  p.roughness_wavelength = j.at("roughness_wavelength");
  p.friction = j.at("friction");
  p.resolution = j.at("resolution");
  p.x_min = j.at("x_min");
  p.x_max = j.at("x_max");
  p.y_min = j.at("y_min");
  p.y_max = j.at("y_max");
  return p;
}

inline std::pair<double, double> range_from(const Json& j, const char* key) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(key) + ": expected [min, max]");
  const double lo = j[0], hi = j[1];
  if (!(lo <= hi)) throw ConfigError(std::string(key) + ": min above max");
  return {lo, hi};
}

template <class F>
auto typed(const char* section, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace detail

inline RobotDescription description_from_config(const Json& cfg) {
  const std::string path = cfg.at("robot").at("description");
  return path.empty() ? default_description() : load_description(path);
}

inline RuntimeConfig runtime_from_config(const Json& cfg) {
  return detail::typed("runtime", [&] {
    RuntimeConfig rt;
    const Json& r = cfg.at("runtime");
    rt.physics_dt = r.at("physics_dt");
    rt.policy_rate = r.at("policy_rate");
    rt.action_scale = r.at("action_scale");
    rt.max_delay_frames = r.at("max_delay_frames");
    const Json& g = r.at("gains");
    rt.gains = {g.at("kp_hip"), g.at("kd_hip"), g.at("kp_thigh"), g.at("kd_thigh"), g.at("kp_calf"), g.at("kd_calf")};
    const Json& s = r.at("obs_scales");
    rt.obs_scales = {s.at("lin_vel"), s.at("ang_vel"), s.at("dof_pos"), s.at("dof_vel"),
                     detail::vec3_from(s.at("commands"), "runtime.obs_scales.commands")};
    const Json& n = r.at("obs_noise");
    rt.obs_noise = {n.at("enabled"), n.at("level"), n.at("lin_vel"), n.at("ang_vel"),
                    n.at("gravity"), n.at("dof_pos"), n.at("dof_vel")};
    rt.fall.min_height = r.at("fall").at("min_height");
    rt.fall.max_tilt = r.at("fall").at("max_tilt_deg").get<double>() * std::numbers::pi / 180.0;

    const Json& b = cfg.at("bus");
    rt.bus.bitrate = b.at("bitrate");
    rt.bus.frame_overhead_bits = b.at("frame_overhead_bits");
    rt.bus.cycle_rate = b.at("cycle_rate");
    rt.bus.motor_count = b.at("motor_count");
    const Json& l = b.at("latency");
    const std::string kind = l.at("kind");
    if (kind != "fixed" && kind != "uniform") throw ConfigError("bus.latency.kind: expected fixed or uniform");
    rt.bus.latency.kind = kind == "fixed" ? LatencyModel::Kind::Fixed : LatencyModel::Kind::Uniform;
    rt.bus.latency.min = l.at("min");
    rt.bus.latency.max = kind == "fixed" ? rt.bus.latency.min : l.at("max").get<double>();
    rt.bus.latency.command_fraction = l.at("command_fraction");

    const Json& c = cfg.at("codec");
    rt.codec.position = detail::field_range_from(c.at("position"));
    rt.codec.velocity = detail::field_range_from(c.at("velocity"));
    rt.codec.kp = detail::field_range_from(c.at("kp"));
    rt.codec.kd = detail::field_range_from(c.at("kd"));
    rt.codec.torque = detail::field_range_from(c.at("torque"));

    const Json& m = cfg.at("sim");
    rt.sim.gravity = detail::vec3_from(m.at("gravity"), "sim.gravity");
    rt.sim.contact_stiffness = m.at("contact_stiffness");
    rt.sim.contact_damping = m.at("contact_damping");
    rt.sim.friction_velocity = m.at("friction_velocity");
    rt.sim.joint_damping = m.at("joint_damping");
    rt.sim.joint_coulomb = m.at("joint_coulomb");
    rt.sim.coulomb_velocity = m.at("coulomb_velocity");
    rt.sim.include_rotor_inertia = m.at("include_rotor_inertia");
    rt.validate();
    return rt;
  });
}

inline TrainConfig train_from_config(const Json& cfg) {
  return detail::typed("train", [&] {
    TrainConfig tr;
    const Json& t = cfg.at("train");
    tr.num_envs = t.at("num_envs");
    tr.rollout_length = t.at("rollout_length");
    tr.iterations = t.at("iterations");
    tr.gamma = t.at("gamma");
    tr.lambda = t.at("lambda");
    tr.ppo.clip = t.at("clip");
    tr.ppo.value_coef = t.at("value_coef");
    tr.ppo.entropy_coef = t.at("entropy_coef");
    tr.ppo.max_grad_norm = t.at("max_grad_norm");
    tr.ppo.learning_rate = t.at("learning_rate");
    tr.ppo.epochs = t.at("epochs");
    tr.ppo.minibatches = t.at("minibatches");
    tr.init_noise_std = t.at("init_noise_std");
    tr.actor_hidden = t.at("actor_hidden").get<std::vector<int>>();
    tr.critic_hidden = t.at("critic_hidden").get<std::vector<int>>();
    tr.delay = t.at("delay_randomization").get<bool>() ? DelayRandomization::UniformFrames : DelayRandomization::Off;
    tr.delay_min = t.at("delay_min");
    tr.delay_max = t.at("delay_max");
    const Json& w = t.at("reward_weights");
    for (int i = 0; i < kNumRewardTerms; ++i)
      tr.rewards.w[static_cast<std::size_t>(i)] = w.at(kRewardTermNames[static_cast<std::size_t>(i)]);
    tr.rewards.tracking_sigma = t.at("tracking_sigma");
    tr.rewards.only_positive = t.at("only_positive_rewards");
    const Json& c = t.at("commands");
    std::tie(tr.commands.vx_min, tr.commands.vx_max) = detail::range_from(c.at("vx"), "train.commands.vx");
    std::tie(tr.commands.vy_min, tr.commands.vy_max) = detail::range_from(c.at("vy"), "train.commands.vy");
    std::tie(tr.commands.wz_min, tr.commands.wz_max) = detail::range_from(c.at("wz"), "train.commands.wz");
    tr.episode_length = t.at("episode_length");
    tr.command_resample_time = t.at("command_resample_time");
    tr.spawn_joint_noise = t.at("spawn_joint_noise");
    tr.spawn_velocity_noise = t.at("spawn_velocity_noise");
    tr.terrains.clear();
    for (const auto& k : t.at("terrains")) tr.terrains.push_back(terrain_kind_from_name(k.get<std::string>()));
    tr.terrain_params = detail::terrain_params_from(t.at("terrain"));
    tr.seed = t.at("seed");
    tr.workers = t.at("workers");
    tr.checkpoint_every = t.at("checkpoint_every");

    RuntimeConfig rt = runtime_from_config(cfg);
    const double lat = t.at("channel_latency");
    if (!(lat >= 0.0)) throw ConfigError("train.channel_latency: must be non-negative");
    rt.bus.latency = LatencyModel::fixed(lat, rt.bus.latency.command_fraction);
    rt.record_log = false;
    tr.runtime = rt;
    if (tr.checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be non-negative");
    tr.validate();
    return tr;
  });
}

inline Scenario scenario_from_config(const Json& cfg) {
  return detail::typed("scenario", [&] {
    Scenario sc;
    const Json& s = cfg.at("scenario");
    sc.name = s.at("name");
    sc.terrain = terrain_kind_from_name(s.at("terrain"));
    sc.terrain_params = detail::terrain_params_from(s.at("terrain_params"));
    sc.overlay_steps = s.at("overlay_steps");
    for (const auto& seg : s.at("commands"))
      sc.commands.push_back({seg.at("start").get<double>(), Vec3{seg.at("vx").get<double>(), seg.at("vy").get<double>(), seg.at("wz").get<double>()}});
    sc.duration = s.at("duration");
    if (!s.at("latency").is_null()) sc.latency = s.at("latency").get<double>();
    sc.delay_frames = s.at("delay_frames");
    sc.seed = s.at("seed");
    sc.suspended = s.at("suspended");
    sc.rig_height = s.at("rig_height");
    const Json& p = s.at("script");
    sc.script = {p.at("enabled"), p.at("joint"), p.at("amplitude"), p.at("frequency"), p.at("feedforward")};
    sc.lag_joint = s.at("lag_joint");
    sc.spawn_joint_noise = s.at("spawn_joint_noise");
    sc.spawn_velocity_noise = s.at("spawn_velocity_noise");
    sc.validate();
    return sc;
  });
}

inline AbStudyConfig ab_study_from_config(const Json& cfg) {
  return detail::typed("ab_study", [&] {
    AbStudyConfig ab;
    const Json& a = cfg.at("ab_study");
    ab.delays = a.at("delays").get<std::vector<int>>();
    ab.seeds = a.at("seeds");
    ab.first_seed = a.at("first_seed");
    ab.duration = a.at("duration");
    ab.command = detail::vec3_from(a.at("command"), "ab_study.command");
    ab.latency = a.at("latency");
    ab.spawn_joint_noise = a.at("spawn_joint_noise");
    ab.spawn_velocity_noise = a.at("spawn_velocity_noise");
    ab.terrain = terrain_kind_from_name(a.at("terrain"));
    ab.validate();
    return ab;
  });
}

}  // namespace mevius
