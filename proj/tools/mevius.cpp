// mevius: training, scenario runs, the delay A/B study, replay and checks.
//
// Exit status: 0 when every requested run completed without a fault,
// 1 on a fault, divergence or failed check, 2 on a usage or config error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mevius/app.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_out) {
  c.out = default_out;
  cmd->add_option("-c,--config", c.config, "JSON config file merged over the defaults")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed for this invocation");
  cmd->add_option("-o,--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("-s,--set", c.overrides, "Override, dotted.key=value (repeatable)");
}

mevius::Json resolve(const Common& c, const char* seed_key_section, const char* seed_key) {
  auto cfg = mevius::resolve_config(c.config, c.overrides);
  if (c.seed) cfg[seed_key_section][seed_key] = *c.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadruped locomotion simulator, trainer and experiment harness"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mevius::kToolVersion);

  Common train_opt, run_opt, ab_opt, replay_opt, codec_opt, describe_opt;
  bool delay_randomization = false;
  bool quiet = false;
  std::string run_policy, trained_policy, baseline_policy, replay_log, hex_frame;

  auto* train = app.add_subcommand("train", "Train a policy with PPO");
  add_common(train, train_opt, "out/train");
  train->add_flag("--delay-randomization", delay_randomization, "Sample 1-3 action delay frames per episode");
  train->add_flag("-q,--quiet", quiet, "No per-iteration progress");

  auto* run = app.add_subcommand("run", "Run one scenario and write log, metrics and manifest");
  add_common(run, run_opt, "out/run");
  run->add_option("-p,--policy", run_policy, "Policy parameter file (default: hold the standing pose)");

  auto* ab = app.add_subcommand("ab-study", "Compare delay-trained and baseline policies under deployed delays");
  add_common(ab, ab_opt, "out/ab");
  ab->add_option("--trained", trained_policy, "Delay-trained policy file");
  ab->add_option("--baseline", baseline_policy, "Baseline policy file");

  auto* replay = app.add_subcommand("replay", "Recompute metrics from a binary episode log");
  add_common(replay, replay_opt, "");
  replay->add_option("log", replay_log, "Episode log (log.bin)")->required();

  auto* codec = app.add_subcommand("codec-check", "Exhaustive motor frame codec round-trip check");
  add_common(codec, codec_opt, "");
  codec->add_option("--decode", hex_frame, "Decode one 8-byte command frame given as 16 hex digits");

  auto* desc = app.add_subcommand("describe", "Print the resolved robot, timing and config");
  add_common(desc, describe_opt, "");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto cfg = resolve(train_opt, "train", "seed");
      if (delay_randomization) cfg["train"]["delay_randomization"] = true;
      const auto tc = mevius::train_from_config(cfg);
      const auto r = mevius::train_to_dir(mevius::description_from_config(cfg), tc, train_opt.out, cfg,
                                          quiet ? nullptr : &std::cout);
      if (r.diverged) {
        std::cerr << "error: " << r.error << " (kept checkpoint from iteration " << r.checkpoint_iteration << ")\n";
        return 1;
      }
      std::cout << "trained " << r.iterations << " iterations -> " << train_opt.out << "\n";
      return 0;
    }
    if (*run) {
      auto cfg = resolve(run_opt, "scenario", "seed");
      if (!run_policy.empty()) cfg["scenario"]["policy"] = run_policy;
      const auto r = mevius::run_to_dir(cfg, run_opt.out);
      std::cout << mevius::metrics_json_text(r.result.report);
      if (!r.ok) std::cerr << "error: simulation fault: " << r.result.log.fault << "\n";
      return r.ok ? 0 : 1;
    }
    if (*ab) {
      auto cfg = resolve(ab_opt, "ab_study", "first_seed");
      if (!trained_policy.empty()) cfg["ab_study"]["delay_trained_policy"] = trained_policy;
      if (!baseline_policy.empty()) cfg["ab_study"]["baseline_policy"] = baseline_policy;
      const auto r = mevius::ab_study_to_dir(cfg, ab_opt.out);
      mevius::write_ab_table(std::cout, r);
      return 0;
    }
    if (*replay) {
      const auto log = mevius::load_episode_log(replay_log);
      const auto report = mevius::metrics_from_log(log);
      if (!replay_opt.out.empty()) {
        std::filesystem::create_directories(replay_opt.out);
        mevius::write_text(std::filesystem::path(replay_opt.out) / "metrics.json", mevius::metrics_json_text(report));
        std::ofstream os(std::filesystem::path(replay_opt.out) / "metrics.csv");
        mevius::write_metrics_csv(os, report);
      }
      std::cout << mevius::metrics_json_text(report);
      return log.termination == mevius::Termination::Fault ? 1 : 0;
    }
    if (*codec) {
      const auto cfg = resolve(codec_opt, "scenario", "seed");
      const auto spec = mevius::runtime_from_config(cfg).codec;
      if (!hex_frame.empty()) {
        if (hex_frame.size() != 16) throw mevius::ConfigError("--decode: expected 16 hex digits");
        mevius::CommandPayload b{};
        for (std::size_t i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(std::stoul(hex_frame.substr(2 * i, 2), nullptr, 16));
        const auto c = mevius::decode_command(spec, b);
        std::printf("p_des %.9g  v_des %.9g  kp %.9g  kd %.9g  tau_ff %.9g\n", c.p_des, c.v_des, c.kp, c.kd, c.tau_ff);
        return 0;
      }
      const auto r = mevius::codec_check(spec, codec_opt.seed.value_or(1));
      std::printf("%-9s %7s %9s %16s\n", "field", "codes", "failures", "max_err/lsb");
      for (const auto& c : r)
        std::printf("%-9s %7u %9u %16.12f\n", c.name.c_str(), c.codes, c.roundtrip_failures, c.max_error_over_lsb);
      const bool ok = mevius::codec_check_passed(r);
      std::printf("%s\n", ok ? "PASS" : "FAIL");
      return ok ? 0 : 1;
    }
    if (*desc) {
      const auto cfg = resolve(describe_opt, "scenario", "seed");
      std::cout << mevius::describe(cfg).dump(2) << "\n";
      return 0;
    }
  } catch (const mevius::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
