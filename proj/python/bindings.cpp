#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>
#include <iterator>

#include "cdan/config.hpp"
#include "cdan/env_check.hpp"
#include "cdan/errors.hpp"
#include "cdan/evaluation.hpp"
#include "cdan/trainer.hpp"

namespace py = pybind11;
using namespace cdan;

namespace {

py::dict report_dict(const MetricsReport& r) {
  py::list tasks;
  for (const auto& t : r.tasks) {
    py::dict d;
    d["task"] = t.task;
    d["name"] = t.name;
    d["distance"] = t.distance;
    d["shorten_distance"] = t.shorten_distance;
    d["success_rate"] = t.success_rate;
    d["average_reward"] = t.average_reward;
    d["episodes"] = t.episodes;
    tasks.append(d);
  }
  py::dict out;
  out["tasks"] = tasks;
  out["nsd"] = r.nsd;
  out["average_reward"] = r.average_reward;
  out["episodes_per_task"] = r.episodes_per_task;
  return out;
}

py::dict stats_dict(const IterationStats& s) {
  py::dict d;
  d["iteration"] = s.iteration;
  d["step"] = s.step;
  d["task"] = s.task;
  d["steps"] = s.steps;
  d["mean_reward"] = s.mean_reward;
  d["entropy"] = s.entropy;
  d["policy_loss"] = s.ppo.policy_loss;
  d["value_loss"] = s.ppo.value_loss;
  d["diversity_loss"] = s.ppo.diversity_loss;
  d["l1_loss"] = s.ppo.l1_loss;
  d["disc_loss"] = s.disc.loss;
  d["disc_accuracy"] = s.disc.accuracy;
  d["gated_fraction"] = s.correction.gated_fraction;
  return d;
}

py::dict rollout_dict(const EvalRollout& r) {
  py::dict d;
  d["task"] = r.task;
  d["index"] = r.index;
  d["start_distance"] = r.start_distance;
  d["final_distance"] = r.final_distance;
  d["reward_sum"] = r.reward_sum;
  d["steps"] = r.steps;
  d["done_reason"] = to_string(r.done_reason);
  return d;
}

std::vector<std::size_t> all_tasks(const MazeEnv& env) {
  std::vector<std::size_t> t(env.task_count());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = i;
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continual maze navigation with diversity exploration and self-correction";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);

  py::class_<Vec2>(m, "Vec2")
      .def(py::init<double, double>(), py::arg("x"), py::arg("y"))
      .def_readwrite("x", &Vec2::x)
      .def_readwrite("y", &Vec2::y)
      .def("__repr__", [](const Vec2& v) { return "Vec2(" + std::to_string(v.x) + ", " + std::to_string(v.y) + ")"; });

  py::class_<AgentState>(m, "AgentState")
      .def(py::init<>())
      .def_readwrite("position", &AgentState::position)
      .def_readwrite("heading", &AgentState::heading)
      .def_readwrite("speed", &AgentState::speed);

  py::class_<Action>(m, "Action")
      .def(py::init([](double accel, double turn) { return Action{accel, turn}; }), py::arg("accel") = 0.0,
           py::arg("turn") = 0.0)
      .def_readwrite("accel", &Action::accel)
      .def_readwrite("turn", &Action::turn);

  py::class_<EnvParams>(m, "EnvParams")
      .def(py::init<>())
      .def_readwrite("eta", &EnvParams::eta)
      .def_readwrite("dt", &EnvParams::dt)
      .def_readwrite("v_max", &EnvParams::v_max)
      .def_readwrite("omega_max", &EnvParams::omega_max)
      .def_readwrite("accel_max", &EnvParams::accel_max)
      .def_readwrite("goal_radius", &EnvParams::goal_radius)
      .def_readwrite("step_limit", &EnvParams::step_limit)
      .def_readwrite("ray_count", &EnvParams::ray_count)
      .def_readwrite("ray_range", &EnvParams::ray_range);

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("next_state", &StepResult::next_state)
      .def_readonly("observation", &StepResult::observation)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_property_readonly("done_reason", [](const StepResult& r) { return to_string(r.done_reason); });

  py::class_<Rng>(m, "Rng").def(py::init<std::uint64_t>(), py::arg("seed") = 0);

  py::class_<MazeEnv>(m, "MazeEnv")
      .def(py::init([](const std::filesystem::path& manifest, const EnvParams& params) {
             return MazeEnv(load_suite(manifest), params);
           }),
           py::arg("manifest"), py::arg("params") = EnvParams{})
      .def_property_readonly("task_count", &MazeEnv::task_count)
      .def_property_readonly("observation_dim", &MazeEnv::observation_dim)
      .def_property_readonly("context_dim", &MazeEnv::context_dim)
      .def_property_readonly("params", &MazeEnv::params)
      .def("task_name", [](const MazeEnv& e, std::size_t i) { return e.task(i).maze.name(); })
      .def("start_distance", [](const MazeEnv& e, std::size_t i) { return e.task(i).start_distance; })
      .def("reset",
           [](const MazeEnv& e, std::size_t task, Rng& rng) {
             auto r = e.reset(task, rng);
             return py::make_tuple(r.state, r.context.as_vector(), r.observation);
           })
      .def("step", &MazeEnv::step, py::arg("task"), py::arg("state"), py::arg("action"), py::arg("steps_taken") = 0)
      .def("observe", &MazeEnv::observe)
      .def("shortest_distance", &MazeEnv::shortest_distance);

  m.def("env_check", [](const MazeEnv& env, std::size_t steps, std::uint64_t seed) {
    EnvCheckOptions o;
    o.adversarial_steps = steps;
    o.seed = seed;
    const EnvCheckReport r = run_env_check(env, o);
    py::dict d;
    d["ok"] = r.ok();
    d["passed"] = r.passed;
    d["failures"] = r.failures;
    d["steps"] = r.steps;
    d["max_telescoping_error"] = r.max_telescoping_error;
    return d;
  }, py::arg("env"), py::arg("steps") = 100000, py::arg("seed") = 0);

  py::class_<RunConfig>(m, "RunConfig")
      .def_static("load", &load_config, py::arg("path"))
      .def_static("parse", [](const std::string& text, const std::filesystem::path& base) { return parse_config(text, base); },
                  py::arg("text"), py::arg("base_dir") = std::filesystem::path{})
      .def("set", [](RunConfig& c, const std::string& key, const std::string& value) {
        apply_setting(c, key, value);
        c.validate();
      })
      .def("format", &format_config)
      .def_readwrite("suite", &RunConfig::suite)
      .def_readwrite("total_steps", &RunConfig::total_steps)
      .def_readwrite("seed", &RunConfig::seed)
      .def_property("ablation", [](const RunConfig& c) { return c.ablation.name(); },
                    [](RunConfig& c, const std::string& name) { c.ablation = Ablation::parse(name); });

  py::class_<Trainer>(m, "Trainer")
      .def(py::init<RunConfig, std::filesystem::path>(), py::arg("config"),
           py::arg("out_dir") = std::filesystem::path{})
      .def_static("resume", &Trainer::resume, py::arg("config"), py::arg("checkpoint"),
                  py::arg("out_dir") = std::filesystem::path{})
      .def_property_readonly("finished", &Trainer::finished)
      .def_property_readonly("global_step", &Trainer::global_step)
      .def_property_readonly("iteration", &Trainer::iteration)
      .def_property_readonly("log_text", &Trainer::log_text)
      .def("iterate", [](Trainer& t) { return stats_dict(t.iterate()); })
      .def("run", &Trainer::run, py::arg("max_iterations") = UINT64_MAX,
           py::call_guard<py::gil_scoped_release>())
      .def("final_evaluation", [](const Trainer& t) { return report_dict(t.final_evaluation()); })
      .def("save_checkpoint", &Trainer::save_checkpoint)
      .def("checkpoint_bytes", [](const Trainer& t) {
        const auto b = t.checkpoint().to_bytes();
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      });

  m.def("evaluate", [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                       std::size_t episodes, std::uint64_t seed, bool deterministic) {
    const Container c = Container::load(checkpoint);
    const MazeEnv env(load_suite(manifest), load_env_params(c));
    const PolicyNet policy = load_policy(c, env);
    RolloutOptions o;
    o.episodes = episodes;
    o.seed = seed;
    o.deterministic = deterministic;
    const auto rollouts = collect_rollouts(policy, env, all_tasks(env), o);
    py::dict d = report_dict(make_report(rollouts, env));
    py::list rs;
    for (const auto& r : rollouts) rs.append(rollout_dict(r));
    d["rollouts"] = rs;
    return d;
  }, py::arg("checkpoint"), py::arg("manifest"), py::arg("episodes") = 50, py::arg("seed") = 0,
     py::arg("deterministic") = false);

  m.def("nsd", [](const std::vector<py::dict>& rollouts, std::size_t tasks, std::size_t per_task) {
    std::vector<EvalRollout> rs;
    for (const auto& d : rollouts) {
      EvalRollout r;
      r.task = d["task"].cast<std::size_t>();
      r.start_distance = d["start_distance"].cast<double>();
      r.final_distance = d["final_distance"].cast<double>();
      rs.push_back(r);
    }
    return nsd(rs, tasks, per_task);
  }, py::arg("rollouts"), py::arg("tasks"), py::arg("per_task"));

  m.def("checkpoint_resave_identical", [](const std::filesystem::path& path) {
    const auto bytes = Container::load(path).to_bytes();
    std::ifstream in(path, std::ios::binary);
    const std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return raw == bytes;
  });
}
