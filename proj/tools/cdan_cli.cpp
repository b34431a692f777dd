#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cdan/config.hpp"
#include "cdan/env_check.hpp"
#include "cdan/errors.hpp"
#include "cdan/evaluation.hpp"
#include "cdan/log.hpp"
#include "cdan/plot.hpp"
#include "cdan/trainer.hpp"

using namespace cdan;

namespace {

struct TrainArgs {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string ablation;
  std::string out;
  std::vector<std::string> settings;
  std::string resume;
  std::uint64_t max_iterations = UINT64_MAX;
};

struct EvalArgs {
  std::string checkpoint;
  std::string suite;
  std::size_t episodes = 50;
  bool deterministic = false;
  std::uint64_t seed = 0;
  std::string csv;
  std::string out;  // rollout log
  std::vector<std::size_t> tasks;
};

struct PlotArgs {
  std::vector<std::string> logs;
  std::vector<std::string> labels;
  std::string out;
};

struct EnvCheckArgs {
  std::string suite;
  std::size_t steps = 100000;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainArgs& a) {
  init_logging("info");
  RunConfig cfg = load_config(a.config);
  const auto base = std::filesystem::path(a.config).parent_path();
  for (const auto& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1), base);
  }
  if (a.seed_set) cfg.seed = a.seed;
  if (!a.ablation.empty()) cfg.ablation = Ablation::parse(a.ablation);
  cfg.validate();
  const std::filesystem::path out =
      a.out.empty() ? std::filesystem::path("runs") / (cfg.ablation.name() + "-seed" + std::to_string(cfg.seed)) : std::filesystem::path(a.out);
  Trainer trainer = a.resume.empty() ? Trainer(cfg, out) : Trainer::resume(cfg, a.resume, out);
  trainer.run(a.max_iterations);
  std::cout << "steps " << trainer.global_step() << ", iterations " << trainer.iteration() << ", output in "
            << out.string() << "\n";
  if (trainer.finished()) std::cout << format_report_table(trainer.final_evaluation());
  return 0;
}

MazeEnv eval_env(const Container& ckpt, const std::string& suite) {
  return MazeEnv(load_suite(suite), load_env_params(ckpt));
}

std::vector<std::size_t> task_list(const EvalArgs& a, const MazeEnv& env) {
  if (!a.tasks.empty()) return a.tasks;
  std::vector<std::size_t> all(env.task_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

int cmd_eval(const EvalArgs& a) {
  init_logging();
  const Container ckpt = Container::load(a.checkpoint);
  const MazeEnv env = eval_env(ckpt, a.suite);
  const PolicyNet policy = load_policy(ckpt, env);
  const auto rollouts = collect_rollouts(policy, env, task_list(a, env),
                                         {a.episodes, a.seed, a.deterministic, false});
  const MetricsReport report = make_report(rollouts, env);
  std::cout << format_report_table(report);
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    if (!csv) throw LoadError("cannot write " + a.csv);
    csv << format_report_csv(report);
  }
  return 0;
}

int cmd_rollout(const EvalArgs& a) {
  init_logging();
  const Container ckpt = Container::load(a.checkpoint);
  const MazeEnv env = eval_env(ckpt, a.suite);
  const PolicyNet policy = load_policy(ckpt, env);
  const auto rollouts = collect_rollouts(policy, env, task_list(a, env), {a.episodes, a.seed, a.deterministic, true});
  write_trajectory_log(a.out, rollouts, env);
  std::cout << "wrote " << rollouts.size() << " episodes to " << a.out << "\n";
  return 0;
}

int cmd_plot(const PlotArgs& a) {
  init_logging();
  if (!a.labels.empty() && a.labels.size() != a.logs.size()) {
    throw UsageError("--label must be given once per --log");
  }
  std::vector<LabeledTrainLog> train_logs;
  std::vector<std::filesystem::path> files;
  for (std::size_t i = 0; i < a.logs.size(); ++i) {
    std::ifstream in(a.logs[i]);
    std::string first;
    if (!in || !std::getline(in, first)) throw LoadError("cannot read " + a.logs[i]);
    if (first.find(kTrajectoryFormat) != std::string::npos) {
      const auto written = plot_trajectory_log(read_trajectory_log(a.logs[i]), a.out);
      files.insert(files.end(), written.begin(), written.end());
    } else {
      const std::string label = a.labels.empty() ? std::filesystem::path(a.logs[i]).parent_path().filename().string()
                                                  : a.labels[i];
      train_logs.push_back({label.empty() ? a.logs[i] : label, read_train_log(a.logs[i])});
    }
  }
  if (!train_logs.empty()) {
    const auto written = plot_training_curves(train_logs, a.out);
    files.insert(files.end(), written.begin(), written.end());
  }
  for (const auto& f : files) std::cout << f.string() << "\n";
  return 0;
}

int cmd_env_check(const EnvCheckArgs& a) {
  init_logging();
  const MazeEnv env(load_suite(a.suite));
  const EnvCheckReport report = run_env_check(env, {a.steps, a.seed});
  for (const auto& p : report.passed) std::cout << "ok    " << p << "\n";
  for (const auto& f : report.failures) std::cout << "FAIL  " << f << "\n";
  std::cout << (report.ok() ? "env-check passed" : "env-check FAILED") << "\n";
  return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual maze agent with diversity exploration and adversarial self-correction"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train over the task sequence");
  t->add_option("--config", train.config, "Run configuration file")->required()->check(CLI::ExistingFile);
  t->add_option("--seed", train.seed, "Override the seed")->each([&](const std::string&) { train.seed_set = true; });
  t->add_option("--ablation", train.ablation, "baseline | de | sc | de+sc")
      ->check(CLI::IsMember({"baseline", "de", "sc", "de+sc"}));
  t->add_option("--out", train.out, "Output directory (default runs/<ablation>-seed<N>)");
  t->add_option("--set", train.settings, "Config override key=value (repeatable)");
  t->add_option("--resume", train.resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  t->add_option("--max-iterations", train.max_iterations, "Stop after this many iterations");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a suite");
  e->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--suite", eval.suite, "Suite manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--episodes", eval.episodes, "Episodes per maze")->capture_default_str();
  e->add_flag("--deterministic", eval.deterministic, "Use the mean action");
  e->add_option("--seed", eval.seed)->capture_default_str();
  e->add_option("--csv", eval.csv, "Also write the report as CSV");

  EvalArgs roll;
  roll.episodes = 5;
  auto* r = app.add_subcommand("rollout", "Dump trajectories of a checkpoint");
  r->add_option("--checkpoint", roll.checkpoint)->required()->check(CLI::ExistingFile);
  r->add_option("--suite", roll.suite, "Suite manifest")->required()->check(CLI::ExistingFile);
  r->add_option("--episodes", roll.episodes, "Episodes per maze")->capture_default_str();
  r->add_option("--tasks", roll.tasks, "Task indices (default all)");
  r->add_flag("--deterministic", roll.deterministic, "Use the mean action");
  r->add_option("--seed", roll.seed)->capture_default_str();
  r->add_option("--out", roll.out, "Trajectory log to write")->required();

  PlotArgs plot;
  auto* p = app.add_subcommand("plot", "Render trajectory or training logs as SVG");
  p->add_option("--log", plot.logs, "Trajectory or train log (repeatable)")->required()->check(CLI::ExistingFile);
  p->add_option("--label", plot.labels, "Legend label per train log");
  p->add_option("--out", plot.out, "Output directory")->required();

  EnvCheckArgs check;
  auto* c = app.add_subcommand("env-check", "Run the environment invariant suite");
  c->add_option("--suite", check.suite, "Suite manifest")->required()->check(CLI::ExistingFile);
  c->add_option("--steps", check.steps, "Adversarial steps")->capture_default_str();
  c->add_option("--seed", check.seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*r) return cmd_rollout(roll);
    if (*p) return cmd_plot(plot);
    if (*c) return cmd_env_check(check);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
