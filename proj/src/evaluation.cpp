#include "cdan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cdan/errors.hpp"
#include "cdan/rng.hpp"

namespace cdan {

Controller policy_controller(const PolicyNet& policy, bool deterministic) {
  return [&policy, deterministic](std::size_t, const AgentState&, std::span<const double> obs,
                                  std::span<const double> context, Rng& rng) {
    const auto e = policy.evaluate(obs, context);
    if (deterministic) return Action{e.mean[0], e.mean[1]};
    const auto s = sample_action(e.mean, e.log_std, rng);
    return Action{s.action[0], s.action[1]};
  };
}

std::vector<EvalRollout> collect_rollouts(const MazeEnv& env, const std::vector<std::size_t>& tasks,
                                          const RolloutOptions& options, const Controller& controller) {
  std::vector<EvalRollout> out;
  out.reserve(tasks.size() * options.episodes);
  for (const std::size_t i : tasks) {
    const MazeTask& task = env.task(i);
    for (std::size_t j = 0; j < options.episodes; ++j) {
      Rng rng(derive_seed(options.seed, i, j));
      auto reset = env.reset(i, rng);
      const auto context = reset.context.as_vector();
      EvalRollout r;
      r.task = i;
      r.index = j;
      r.start = reset.state.position;
      r.goal = task.maze.goal();
      r.start_distance = env.shortest_distance(i, r.start);
      AgentState state = reset.state;
      std::vector<double> obs = std::move(reset.observation);
      if (options.record) {
        r.trajectory.push_back({0, state.position.x, state.position.y, state.heading, state.speed});
        r.observations = obs;
      }
      for (std::size_t t = 0;; ++t) {
        Action a = controller(i, state, obs, context, rng);
        const StepResult res = env.step(i, state, a, t);
        r.reward_sum += res.reward;
        r.steps = t + 1;
        state = res.next_state;
        obs = res.observation;
        if (options.record) {
          auto& prev = r.trajectory.back();
          prev.accel = std::clamp(a.accel, -1.0, 1.0);
          prev.turn = std::clamp(a.turn, -1.0, 1.0);
          prev.reward = res.reward;
          r.trajectory.push_back({t + 1, state.position.x, state.position.y, state.heading, state.speed});
          r.observations.insert(r.observations.end(), obs.begin(), obs.end());
        }
        if (res.done) {
          r.done_reason = res.done_reason;
          break;
        }
      }
      r.final_position = state.position;
      r.final_distance = env.shortest_distance(i, state.position);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<EvalRollout> collect_rollouts(const PolicyNet& policy, const MazeEnv& env,
                                          const std::vector<std::size_t>& tasks, const RolloutOptions& options) {
  if (policy.shape().obs_dim != env.observation_dim() || policy.shape().context_dim != env.context_dim()) {
    throw ConfigError("policy expects observation/context dims " + std::to_string(policy.shape().obs_dim) + "/" +
                      std::to_string(policy.shape().context_dim) + " but the suite provides " +
                      std::to_string(env.observation_dim()) + "/" + std::to_string(env.context_dim()));
  }
  return collect_rollouts(env, tasks, options, policy_controller(policy, options.deterministic));
}

double shorten_distance(std::span<const EvalRollout> rollouts) {
  if (rollouts.empty()) throw UsageError("shorten_distance: no rollouts");
  double s = 0.0;
  for (const auto& r : rollouts) {
    if (r.task != rollouts.front().task) throw UsageError("shorten_distance: rollouts mix tasks");
    s += r.start_distance - r.final_distance;
  }
  return s / static_cast<double>(rollouts.size());
}

double nsd(std::span<const EvalRollout> rollouts, std::size_t tasks, std::size_t per_task) {
  if (tasks == 0 || per_task == 0) throw UsageError("nsd: need at least one task and one trajectory");
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : rollouts) {
    ++counts[r.task];
    if (!(r.start_distance > 0.0)) throw UsageError("nsd: start distance must be positive");
  }
  if (counts.size() != tasks) {
    throw UsageError("nsd: expected " + std::to_string(tasks) + " tasks, found " + std::to_string(counts.size()));
  }
  for (const auto& [task, n] : counts) {
    if (n != per_task) {
      throw UsageError("nsd: task " + std::to_string(task) + " has " + std::to_string(n) + " trajectories, expected " +
                       std::to_string(per_task));
    }
  }
  double s = 0.0;
  for (const auto& r : rollouts) s += (r.start_distance - r.final_distance) / r.start_distance;
  return s / static_cast<double>(tasks * per_task);
}

double average_reward(std::span<const EvalRollout> rollouts) {
  if (rollouts.empty()) throw UsageError("average_reward: no rollouts");
  double s = 0.0;
  for (const auto& r : rollouts) s += r.reward_sum;
  return s / static_cast<double>(rollouts.size());
}

MetricsReport make_report(std::span<const EvalRollout> rollouts, const MazeEnv& env) {
  std::vector<std::size_t> order;
  std::map<std::size_t, std::vector<EvalRollout>> groups;
  for (const auto& r : rollouts) {
    auto& g = groups[r.task];
    if (g.empty()) order.push_back(r.task);
    g.push_back(r);
  }
  MetricsReport report;
  if (order.empty()) return report;
  report.episodes_per_task = groups[order.front()].size();
  for (const std::size_t i : order) {
    const auto& g = groups[i];
    TaskMetrics m;
    m.task = i;
    m.name = env.task(i).maze.name();
    m.distance = g.front().start_distance;
    m.shorten_distance = shorten_distance(g);
    m.average_reward = average_reward(g);
    m.episodes = g.size();
    m.success_rate = static_cast<double>(std::count_if(g.begin(), g.end(), [](const EvalRollout& r) {
                       return r.done_reason == DoneReason::goal_touched;
                     })) /
                     static_cast<double>(g.size());
    report.tasks.push_back(m);
  }
  report.nsd = nsd(rollouts, order.size(), report.episodes_per_task);
  report.average_reward = average_reward(rollouts);
  return report;
}

std::string format_report_table(const MetricsReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(12) << "maze";
  for (const auto& m : report.tasks) os << std::right << std::setw(10) << m.name;
  os << std::setw(10) << "NSD %" << std::setw(10) << "reward" << '\n';
  os << std::left << std::setw(12) << "distance";
  for (const auto& m : report.tasks) os << std::right << std::setw(10) << m.distance;
  os << '\n' << std::left << std::setw(12) << "SD";
  for (const auto& m : report.tasks) os << std::right << std::setw(10) << m.shorten_distance;
  os << std::setw(10) << 100.0 * report.nsd << std::setw(10) << report.average_reward << '\n';
  os << std::left << std::setw(12) << "success";
  for (const auto& m : report.tasks) os << std::right << std::setw(10) << m.success_rate;
  os << '\n'
     << "episodes per maze: " << report.episodes_per_task
     << "; reward = mean over episodes of the per-episode reward sum\n";
  return os.str();
}

std::string format_report_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "task,maze,distance,shorten_distance,success_rate,average_reward,episodes\n";
  for (const auto& m : report.tasks) {
    os << m.task << ',' << m.name << ',' << m.distance << ',' << m.shorten_distance << ',' << m.success_rate << ','
       << m.average_reward << ',' << m.episodes << '\n';
  }
  os << "nsd," << report.nsd << "\naverage_reward," << report.average_reward << '\n';
  return os.str();
}

void write_trajectory_log(std::ostream& out, std::span<const EvalRollout> rollouts, const MazeEnv& env) {
  nlohmann::ordered_json header;
  header["format"] = kTrajectoryFormat;
  header["version"] = kTrajectoryVersion;
  header["mazes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < env.task_count(); ++i) {
    header["mazes"].push_back({{"task", i}, {"name", env.task(i).maze.name()}, {"map", env.task(i).maze.to_text()}});
  }
  out << header.dump() << '\n';
  for (const auto& r : rollouts) {
    const std::string& maze = env.task(r.task).maze.name();
    for (const auto& p : r.trajectory) {
      nlohmann::ordered_json j;
      j["task"] = r.task;
      j["maze"] = maze;
      j["episode"] = r.index;
      j["t"] = p.t;
      j["x"] = p.x;
      j["y"] = p.y;
      j["psi"] = p.heading;
      j["v"] = p.speed;
      j["a"] = p.accel;
      j["omega"] = p.turn;
      j["r"] = p.reward;
      out << j.dump() << '\n';
    }
  }
}

void write_trajectory_log(const std::filesystem::path& path, std::span<const EvalRollout> rollouts,
                          const MazeEnv& env) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  write_trajectory_log(out, rollouts, env);
}

TrajectoryLog read_trajectory_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open trajectory log " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw LoadError(path.string() + ": empty trajectory log");
  TrajectoryLog log;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != kTrajectoryFormat || header.value("version", 0) != kTrajectoryVersion) {
      throw LoadError(path.string() + ": not a version 1 trajectory log");
    }
    for (const auto& m : header.at("mazes")) {
      log.mazes.push_back({m.at("task").get<std::size_t>(), m.at("name").get<std::string>(),
                           m.at("map").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad header: " + e.what());
  }
  auto& out = log.records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrajectoryRecord rec;
      rec.task = j.at("task").get<std::size_t>();
      rec.maze = j.at("maze").get<std::string>();
      rec.episode = j.at("episode").get<std::size_t>();
      rec.point = {j.at("t").get<std::size_t>(), j.at("x").get<double>(),   j.at("y").get<double>(),
                   j.at("psi").get<double>(),    j.at("v").get<double>(),   j.at("a").get<double>(),
                   j.at("omega").get<double>(),  j.at("r").get<double>()};
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

}  // namespace cdan
