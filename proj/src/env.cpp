#include "cdan/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cdan/errors.hpp"
#include "cdan/rng.hpp"

namespace cdan {

using std::numbers::pi;

std::size_t Context::task() const {
  const auto it = std::max_element(task_onehot.begin(), task_onehot.end());
  return static_cast<std::size_t>(it - task_onehot.begin());
}

std::vector<double> Context::as_vector() const {
  std::vector<double> v = task_onehot;
  v.push_back(z);
  return v;
}

Context sample_context(std::size_t task, std::size_t task_count, Rng& rng) {
  if (task >= task_count) {
    throw UsageError("sample_context: task " + std::to_string(task) + " out of " + std::to_string(task_count));
  }
  Context c;
  c.task_onehot.assign(task_count, 0.0);
  c.task_onehot[task] = 1.0;
  double z = rng.uniform(-1.0, 1.0);
  while (z == -1.0) z = rng.uniform(-1.0, 1.0);
  c.z = z;
  return c;
}

const char* to_string(DoneReason r) {
  switch (r) {
    case DoneReason::goal_touched: return "goal_touched";
    case DoneReason::time_limit: return "time_limit";
    default: return "none";
  }
}

MazeTask::MazeTask(Maze m, double expected)
    : maze(std::move(m)), field(maze), start_distance(field.query(maze.start())), expected_distance(expected) {}

std::vector<SuiteEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("manifest: cannot open " + path.string());
  std::vector<SuiteEntry> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kw;
    if (!(ls >> kw)) continue;
    if (!header) {
      int version = 0;
      if (kw != "cdan-suite" || !(ls >> version) || version != 1) {
        throw LoadError("manifest " + path.string() + ": expected header 'cdan-suite 1' on line " +
                        std::to_string(lineno));
      }
      header = true;
      continue;
    }
    SuiteEntry e;
    std::string file;
    if (kw != "maze" || !(ls >> e.name >> file)) {
      throw LoadError("manifest " + path.string() + ": malformed entry on line " + std::to_string(lineno));
    }
    if (!(ls >> e.expected_distance)) e.expected_distance = 0.0;
    e.file = path.parent_path() / file;
    out.push_back(std::move(e));
  }
  if (!header) throw LoadError("manifest " + path.string() + ": missing header");
  if (out.empty()) throw LoadError("manifest " + path.string() + ": no mazes listed");
  return out;
}

std::vector<MazeTask> load_suite(const std::filesystem::path& manifest) {
  std::vector<MazeTask> tasks;
  for (const auto& e : read_manifest(manifest)) tasks.emplace_back(load_maze_file(e.file, e.name), e.expected_distance);
  return tasks;
}

double wrap_angle(double a) {
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

int heading_bucket(double heading) {
  const int b = static_cast<int>(std::floor((heading + pi) / (pi / 4.0)));
  return ((b % 8) + 8) % 8;
}

double cast_ray(const Maze& maze, Vec2 origin, double angle, double max_range) {
  const double dx = std::cos(angle), dy = std::sin(angle);
  Cell cell = Maze::cell_of(origin);
  if (maze.is_wall(cell)) return 0.0;
  const long step_x = dx > 0 ? 1 : -1, step_y = dy > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  const double delta_x = dx != 0.0 ? std::abs(1.0 / dx) : inf;
  const double delta_y = dy != 0.0 ? std::abs(1.0 / dy) : inf;
  double t_x = dx != 0.0 ? ((dx > 0 ? (cell.col + 1) - origin.x : origin.x - cell.col) * delta_x) : inf;
  double t_y = dy != 0.0 ? ((dy > 0 ? (cell.row + 1) - origin.y : origin.y - cell.row) * delta_y) : inf;
  while (true) {
    double t;
    if (t_x < t_y) {
      t = t_x;
      cell.col += step_x;
      t_x += delta_x;
    } else {
      t = t_y;
      cell.row += step_y;
      t_y += delta_y;
    }
    if (t >= max_range) return max_range;
    if (maze.is_wall(cell)) return t;
  }
}

AgentState integrate(const Maze& maze, const AgentState& s, Action a, const EnvParams& p) {
  const double accel = std::clamp(a.accel, -1.0, 1.0);
  const double turn = std::clamp(a.turn, -1.0, 1.0);
  AgentState n;
  n.heading = wrap_angle(s.heading + turn * p.omega_max * p.dt);
  n.speed = std::clamp(s.speed + accel * p.accel_max * p.dt, 0.0, p.v_max);
  n.position = s.position;
  const Vec2 target{s.position.x + n.speed * std::cos(n.heading) * p.dt,
                    s.position.y + n.speed * std::sin(n.heading) * p.dt};
  if (maze.is_free({target.x, n.position.y})) n.position.x = target.x;
  if (maze.is_free({n.position.x, target.y})) n.position.y = target.y;
  return n;
}

MazeEnv::MazeEnv(std::vector<MazeTask> tasks, EnvParams params) : tasks_(std::move(tasks)), params_(params) {
  if (tasks_.empty()) throw ConfigError("MazeEnv: no tasks");
  if (params_.dt <= 0 || params_.v_max <= 0 || params_.ray_range <= 0 || params_.step_limit == 0) {
    throw ConfigError("MazeEnv: dt, v_max, ray_range and step_limit must be positive");
  }
  if (params_.v_max * params_.dt >= Maze::cell_size()) {
    throw ConfigError("MazeEnv: v_max * dt must be below the cell size");
  }
}

const MazeTask& MazeEnv::task(std::size_t i) const {
  if (i >= tasks_.size()) {
    throw UsageError("MazeEnv: task " + std::to_string(i) + " out of " + std::to_string(tasks_.size()));
  }
  return tasks_[i];
}

MazeEnv::Reset MazeEnv::reset(std::size_t i, Rng& rng) const {
  const MazeTask& t = task(i);
  Reset r;
  r.state.position = t.maze.start();
  r.state.heading = rng.uniform_open_closed(-pi, pi);
  r.state.speed = 0.0;
  r.context = sample_context(i, tasks_.size(), rng);
  r.observation = observe(i, r.state);
  return r;
}

double MazeEnv::shortest_distance(std::size_t i, Vec2 p) const { return task(i).field.query(p); }

std::vector<double> MazeEnv::observe(std::size_t i, const AgentState& s) const {
  const MazeTask& t = task(i);
  std::vector<double> o;
  o.reserve(observation_dim());
  o.push_back(s.position.x / static_cast<double>(t.maze.width()));
  o.push_back(s.position.y / static_cast<double>(t.maze.height()));
  o.push_back(std::cos(s.heading));
  o.push_back(std::sin(s.heading));
  o.push_back(s.speed / params_.v_max);
  for (std::size_t k = 0; k < params_.ray_count; ++k) {
    const double angle = s.heading + 2.0 * pi * static_cast<double>(k) / static_cast<double>(params_.ray_count);
    o.push_back(cast_ray(t.maze, s.position, angle, params_.ray_range) / params_.ray_range);
  }
  o.push_back((t.field.query(s.position) - t.start_distance) / t.start_distance);
  return o;
}

StepResult MazeEnv::step(std::size_t i, const AgentState& s, Action a, std::size_t steps_taken) const {
  if (!std::isfinite(a.accel) || !std::isfinite(a.turn)) {
    std::ostringstream os;
    os << "MazeEnv::step: non-finite action (" << a.accel << ", " << a.turn << ") on task " << i << " at step "
       << steps_taken << ", position (" << s.position.x << ", " << s.position.y << ")";
    throw NumericError(os.str());
  }
  const MazeTask& t = task(i);
  StepResult r;
  r.next_state = integrate(t.maze, s, a, params_);
  const double d0 = t.field.query(s.position);
  const double d1 = t.field.query(r.next_state.position);
  r.reward = d0 - d1 - params_.eta;
  // The goal area is measured with the same shortest-path distance as the reward.
  if (d1 <= params_.goal_radius) {
    r.done = true;
    r.done_reason = DoneReason::goal_touched;
  } else if (steps_taken + 1 >= params_.step_limit) {
    r.done = true;
    r.done_reason = DoneReason::time_limit;
  }
  r.observation = observe(i, r.next_state);
  return r;
}

}  // namespace cdan
