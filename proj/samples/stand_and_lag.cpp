// Stand for a few seconds with the default pose held, then measure joint
// tracking lag on a suspended rig with and without bus latency.

#include <cstdio>

#include "mevius/harness.hpp"

int main() {
  using namespace mevius;
  const auto desc = default_description();
  const RuntimeConfig rt;

  Scenario stand;
  stand.name = "stand";
  stand.duration = 5.0;
  const auto r = run_scenario(desc, rt, stand, nullptr);
  std::printf("stand: %s, vibration %.4f rad/s, %zu frames\n", r.report.termination.c_str(), r.report.vibration,
              r.log.frames.size());

  for (double latency : {0.0, 0.02, 0.04}) {
    const auto lag = run_scenario(desc, rt, sinusoid_scenario(latency), nullptr).report;
    std::printf("latency %.3f s -> tracking lag %.4f s\n", latency, lag.phase_lag);
  }
}
