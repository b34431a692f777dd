#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cdan/env.hpp"
#include "cdan/policy.hpp"

namespace cdan {

class Rng;

struct TrajectoryPoint {
  std::size_t t = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double accel = 0.0;  // clamped action sent to the env
  double turn = 0.0;
  double reward = 0.0;
};

struct EvalRollout {
  std::size_t task = 0;
  std::size_t index = 0;  // trajectory j within the task
  Vec2 start;
  Vec2 final_position;
  Vec2 goal;
  double start_distance = 0.0;  // d(p_0, g)
  double final_distance = 0.0;  // d(p_n, g), the field value where the episode stopped
  double reward_sum = 0.0;
  std::size_t steps = 0;
  DoneReason done_reason = DoneReason::none;
  std::vector<TrajectoryPoint> trajectory;  // filled when recording; one point per state s_0..s_n
  std::vector<double> observations;         // filled when recording; s_0..s_n, obs_dim each
};

// Chooses the action for the current state. Gets the episode's RNG stream.
using Controller = std::function<Action(std::size_t task, const AgentState& state, std::span<const double> obs,
                                        std::span<const double> context, Rng& rng)>;

struct RolloutOptions {
  std::size_t episodes = 50;  // T per task
  std::uint64_t seed = 0;
  bool deterministic = false;  // mean action instead of a sample
  bool record = false;
};

// T episodes per listed task. Episode (i, j) draws from its own stream
// derive_seed(seed, i, j), so results do not depend on collection order.
std::vector<EvalRollout> collect_rollouts(const MazeEnv& env, const std::vector<std::size_t>& tasks,
                                          const RolloutOptions& options, const Controller& controller);
std::vector<EvalRollout> collect_rollouts(const PolicyNet& policy, const MazeEnv& env,
                                          const std::vector<std::size_t>& tasks, const RolloutOptions& options);

Controller policy_controller(const PolicyNet& policy, bool deterministic);

// mean_j [d(p_0, g) - d(p_n, g)]; all rollouts must share one task.
double shorten_distance(std::span<const EvalRollout> rollouts);
// Normalized shorten distance over exactly `tasks` distinct tasks with
// `per_task` rollouts each; throws UsageError otherwise.
double nsd(std::span<const EvalRollout> rollouts, std::size_t tasks, std::size_t per_task);
// Mean per-episode reward sum.
double average_reward(std::span<const EvalRollout> rollouts);

struct TaskMetrics {
  std::size_t task = 0;
  std::string name;
  double distance = 0.0;  // d(p_0, g)
  double shorten_distance = 0.0;
  double success_rate = 0.0;
  double average_reward = 0.0;
  std::size_t episodes = 0;
};

struct MetricsReport {
  std::vector<TaskMetrics> tasks;
  double nsd = 0.0;
  double average_reward = 0.0;
  std::size_t episodes_per_task = 0;
};

// Rollouts grouped by task in order of first appearance.
MetricsReport make_report(std::span<const EvalRollout> rollouts, const MazeEnv& env);
std::string format_report_table(const MetricsReport& report);
std::string format_report_csv(const MetricsReport& report);

// Newline-delimited JSON: a header record, then one record per step.
inline constexpr const char* kTrajectoryFormat = "cdan-trajectories";
inline constexpr int kTrajectoryVersion = 1;

struct TrajectoryRecord {
  std::size_t task = 0;
  std::string maze;
  std::size_t episode = 0;
  TrajectoryPoint point;
};

struct TrajectoryLog {
  struct MazeInfo {
    std::size_t task = 0;
    std::string name;
    std::string map;  // ASCII grid
  };
  std::vector<MazeInfo> mazes;  // every maze of the suite, by task index
  std::vector<TrajectoryRecord> records;
};

// The header carries the suite's maze maps so the log can be plotted on its own.
void write_trajectory_log(std::ostream& out, std::span<const EvalRollout> rollouts, const MazeEnv& env);
void write_trajectory_log(const std::filesystem::path& path, std::span<const EvalRollout> rollouts,
                          const MazeEnv& env);
TrajectoryLog read_trajectory_log(const std::filesystem::path& path);

}  // namespace cdan
