#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "cdan/maze.hpp"

namespace cdan {

class Rng;

// Kinematic unicycle robot and episode settings. dt in s, speeds in m/s.
struct EnvParams {
  double eta = 0.05;  // time punishment per step, in metres of progress
  double dt = 0.1;
  double v_max = 1.0;
  double omega_max = std::numbers::pi;  // rad/s at |turn| = 1
  double accel_max = 2.0;               // m/s^2 at |accel| = 1
  double goal_radius = 0.5;
  std::size_t step_limit = 400;
  std::size_t ray_count = 8;
  double ray_range = 5.0;
};

struct AgentState {
  Vec2 position;
  double heading = 0.0;  // (-pi, pi]
  double speed = 0.0;
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct Action {
  double accel = 0.0;
  double turn = 0.0;
};

// Task identity plus one per-episode random variable z.
struct Context {
  std::vector<double> task_onehot;
  double z = 0.0;

  std::size_t task() const;
  std::vector<double> as_vector() const;
  friend bool operator==(const Context&, const Context&) = default;
};

// z ~ Uniform(-1, 1).
Context sample_context(std::size_t task, std::size_t task_count, Rng& rng);

enum class DoneReason { none, goal_touched, time_limit };
const char* to_string(DoneReason r);

struct StepResult {
  AgentState next_state;
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  DoneReason done_reason = DoneReason::none;
};

struct MazeTask {
  Maze maze;
  DistanceField field;
  double start_distance = 0.0;     // d(p_0, g) from the field
  double expected_distance = 0.0;  // configured in the suite manifest, 0 if absent

  explicit MazeTask(Maze m, double expected = 0.0);
};

struct SuiteEntry {
  std::string name;
  std::filesystem::path file;
  double expected_distance = 0.0;
};

// Manifest: first line "cdan-suite 1", then "maze <name> <file> <distance_m>"
// lines in curriculum order. '#' starts a comment. Paths are relative to the
// manifest's directory.
std::vector<SuiteEntry> read_manifest(const std::filesystem::path& path);
std::vector<MazeTask> load_suite(const std::filesystem::path& manifest);

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);
// floor((heading + pi) / (pi / 4)) mod 8.
int heading_bucket(double heading);

// Distance from origin along angle to the first wall boundary, capped at max_range.
double cast_ray(const Maze& maze, Vec2 origin, double angle, double max_range);

// Kinematics with axis-separated wall sliding; never moves into a wall cell.
AgentState integrate(const Maze& maze, const AgentState& s, Action a, const EnvParams& params);

class MazeEnv {
 public:
  MazeEnv(std::vector<MazeTask> tasks, EnvParams params = {});

  struct Reset {
    AgentState state;
    Context context;
    std::vector<double> observation;
  };

  std::size_t task_count() const { return tasks_.size(); }
  const MazeTask& task(std::size_t i) const;
  const std::vector<MazeTask>& tasks() const { return tasks_; }
  const EnvParams& params() const { return params_; }

  std::size_t observation_dim() const { return 6 + params_.ray_count; }
  std::size_t context_dim() const { return tasks_.size() + 1; }

  // Start cell centre, heading ~ Uniform(-pi, pi], zero speed, fresh context.
  Reset reset(std::size_t task, Rng& rng) const;
  // steps_taken counts steps already taken in the episode, for the step limit.
  StepResult step(std::size_t task, const AgentState& s, Action a, std::size_t steps_taken) const;
  std::vector<double> observe(std::size_t task, const AgentState& s) const;
  double shortest_distance(std::size_t task, Vec2 p) const;

 private:
  std::vector<MazeTask> tasks_;
  EnvParams params_;
};

}  // namespace cdan
