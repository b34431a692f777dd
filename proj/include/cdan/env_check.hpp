#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdan/env.hpp"

namespace cdan {

struct EnvCheckOptions {
  std::size_t adversarial_steps = 100000;
  std::uint64_t seed = 0;
  double telescoping_tolerance = 1e-9;
};

struct EnvCheckReport {
  std::vector<std::string> passed;
  std::vector<std::string> failures;
  std::size_t steps = 0;
  std::size_t episodes = 0;
  double max_telescoping_error = 0.0;

  bool ok() const { return failures.empty(); }
};

// Field checks: goal value 0, every allowed move changes the field by at most
// its cost, every free non-goal cell has a strictly smaller neighbour on a
// shortest path, and start distances equal the manifest's values.
void check_distance_fields(const MazeEnv& env, EnvCheckReport& report);
// Random and out-of-range actions across all tasks. Checks that the agent never
// ends a step inside a wall and that every episode's rewards telescope.
void check_dynamics(const MazeEnv& env, const EnvCheckOptions& options, EnvCheckReport& report);

EnvCheckReport run_env_check(const MazeEnv& env, const EnvCheckOptions& options = {});

// |sum r + n eta + d(p_n) - d(p_0)| for one episode.
double telescoping_error(double reward_sum, std::size_t steps, double eta, double d0, double dn);

}  // namespace cdan
