// A few PPO iterations on a small batch, then a short walk with the result.
// Usage: train_tiny [iterations]

#include <cstdio>
#include <cstdlib>

#include "mevius/harness.hpp"
#include "mevius/trainer.hpp"

int main(int argc, char** argv) {
  using namespace mevius;
  const int iters = argc > 1 ? std::atoi(argv[1]) : 10;
  const auto desc = default_description();

  TrainConfig cfg;
  cfg.num_envs = 16;
  cfg.iterations = iters;
  cfg.delay = DelayRandomization::UniformFrames;
  Trainer tr(desc, cfg);
  for (int i = 0; i < iters; ++i) {
    const auto row = tr.step();
    std::printf("%3d reward %.5f episode %.2f s std %.3f\n", row.iteration, row.mean_reward, row.mean_episode_length,
                row.action_std);
  }

  const Mlp policy = tr.actor_critic().actor;
  Scenario walk;
  walk.name = "walk";
  walk.duration = 4.0;
  walk.commands = {{0.0, Vec3{0.5, 0.0, 0.0}}};
  const auto r = run_scenario(desc, RuntimeConfig{}, walk, &policy).report;
  std::printf("walk: %s after %.2f s, distance %.3f m\n", r.termination.c_str(), r.duration, r.distance);
}
