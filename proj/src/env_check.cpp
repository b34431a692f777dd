#include "cdan/env_check.hpp"

#include <cmath>
#include <sstream>

#include "cdan/rng.hpp"

namespace cdan {

double telescoping_error(double reward_sum, std::size_t steps, double eta, double d0, double dn) {
  return std::abs(reward_sum + static_cast<double>(steps) * eta + dn - d0);
}

void check_distance_fields(const MazeEnv& env, EnvCheckReport& report) {
  for (std::size_t i = 0; i < env.task_count(); ++i) {
    const MazeTask& t = env.task(i);
    const Maze& m = t.maze;
    const std::string name = m.name();
    std::size_t bad_lipschitz = 0, bad_descent = 0;
    for (std::size_t row = 0; row < m.height(); ++row) {
      for (std::size_t col = 0; col < m.width(); ++col) {
        const Cell c{static_cast<long>(col), static_cast<long>(row)};
        if (m.is_wall(c)) continue;
        const double f = t.field.at(c);
        bool descends = c == m.goal_cell();
        for (const GridMove& mv : grid_moves(m, c)) {
          const double g = t.field.at(mv.to);
          if (std::abs(f - g) > mv.cost + 1e-12) ++bad_lipschitz;
          if (g < f && std::abs(g + mv.cost - f) <= 1e-12) descends = true;
        }
        if (!descends) ++bad_descent;
      }
    }
    if (t.field.at(m.goal_cell()) != 0.0) report.failures.push_back(name + ": field at goal is not 0");
    if (bad_lipschitz) {
      report.failures.push_back(name + ": " + std::to_string(bad_lipschitz) + " moves change the field by more than their cost");
    }
    if (bad_descent) {
      report.failures.push_back(name + ": " + std::to_string(bad_descent) + " cells lack a strictly decreasing shortest-path neighbour");
    }
    if (!bad_lipschitz && !bad_descent) report.passed.push_back(name + ": distance field monotone");
    if (t.expected_distance > 0.0) {
      std::ostringstream os;
      os << name << ": start distance " << t.start_distance << " m, expected " << t.expected_distance << " m";
      if (std::abs(t.start_distance - t.expected_distance) > 1e-12) {
        report.failures.push_back(os.str());
      } else {
        report.passed.push_back(os.str());
      }
    }
  }
}

void check_dynamics(const MazeEnv& env, const EnvCheckOptions& options, EnvCheckReport& report) {
  Rng rng(options.seed);
  const double eta = env.params().eta;
  std::size_t inside_wall = 0, bad_speed = 0, bad_telescoping = 0;
  std::size_t steps = 0, episodes = 0;
  std::size_t task = 0;
  while (steps < options.adversarial_steps) {
    auto reset = env.reset(task, rng);
    AgentState s = reset.state;
    const double d0 = env.shortest_distance(task, s.position);
    double sum = 0.0;
    std::size_t n = 0;
    // Alternate between saturated bang-bang controls and out-of-range noise.
    const bool bang = episodes % 2 == 0;
    while (steps < options.adversarial_steps) {
      Action a;
      if (bang) {
        a = {rng.uniform() < 0.8 ? 1.0 : -1.0, rng.uniform() < 0.5 ? -1.0 : 1.0};
      } else {
        a = {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      }
      const StepResult r = env.step(task, s, a, n);
      ++steps;
      ++n;
      sum += r.reward;
      s = r.next_state;
      if (!env.task(task).maze.is_free(s.position)) ++inside_wall;
      if (s.speed < 0.0 || s.speed > env.params().v_max) ++bad_speed;
      if (r.done) break;
    }
    const double err = telescoping_error(sum, n, eta, d0, env.shortest_distance(task, s.position));
    report.max_telescoping_error = std::max(report.max_telescoping_error, err);
    if (err >= options.telescoping_tolerance) ++bad_telescoping;
    ++episodes;
    task = (task + 1) % env.task_count();
  }
  report.steps += steps;
  report.episodes += episodes;
  std::ostringstream summary;
  summary << steps << " adversarial steps over " << episodes << " episodes";
  if (inside_wall) report.failures.push_back(std::to_string(inside_wall) + " steps ended inside a wall");
  if (bad_speed) report.failures.push_back(std::to_string(bad_speed) + " steps left the speed bounds");
  if (bad_telescoping) {
    report.failures.push_back(std::to_string(bad_telescoping) + " episodes broke reward telescoping");
  }
  if (!inside_wall && !bad_speed) report.passed.push_back(summary.str() + ": no wall penetration");
  if (!bad_telescoping) {
    std::ostringstream os;
    os << "reward telescoping holds, max error " << report.max_telescoping_error;
    report.passed.push_back(os.str());
  }
}

EnvCheckReport run_env_check(const MazeEnv& env, const EnvCheckOptions& options) {
  EnvCheckReport report;
  check_distance_fields(env, report);
  check_dynamics(env, options, report);
  return report;
}

}  // namespace cdan
