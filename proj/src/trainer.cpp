#include "cdan/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cdan/errors.hpp"
#include "cdan/layers.hpp"
#include "cdan/log.hpp"

namespace cdan {

namespace {

constexpr std::uint64_t kEvalStream = 0x5eed;
constexpr std::uint64_t kFinalEvalStream = 0xf17a1;

std::vector<double> env_vector(const EnvParams& p) {
  return {p.eta,         p.dt,
          p.v_max,       p.omega_max,
          p.accel_max,   p.goal_radius,
          static_cast<double>(p.step_limit), static_cast<double>(p.ray_count),
          p.ray_range};
}

std::vector<std::size_t> seen_tasks(const TaskSchedule& s, std::size_t position) {
  return {s.order.begin(), s.order.begin() + static_cast<std::ptrdiff_t>(std::min(position + 1, s.order.size()))};
}

}  // namespace

TaskSchedule TaskSchedule::even(std::size_t tasks, std::uint64_t total) {
  if (tasks == 0) throw ConfigError("TaskSchedule: no tasks");
  if (total < tasks) throw ConfigError("TaskSchedule: fewer steps than tasks");
  TaskSchedule s;
  for (std::size_t i = 0; i < tasks; ++i) {
    s.order.push_back(i);
    s.budgets.push_back(total / tasks + (i < total % tasks ? 1 : 0));
  }
  return s;
}

std::uint64_t TaskSchedule::total() const {
  std::uint64_t t = 0;
  for (auto b : budgets) t += b;
  return t;
}

double entropy_telemetry(std::span<const double> log_std, std::size_t action_dim) {
  if (action_dim == 0 || log_std.empty() || log_std.size() % action_dim != 0) {
    throw UsageError("entropy_telemetry: log_std size is not a multiple of the action dim");
  }
  const std::size_t rows = log_std.size() / action_dim;
  double s = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    s += gaussian_entropy(Tensor::vector({log_std.begin() + static_cast<std::ptrdiff_t>(r * action_dim),
                                          log_std.begin() + static_cast<std::ptrdiff_t>((r + 1) * action_dim)}));
  }
  return s / static_cast<double>(rows);
}

std::size_t sample_episode_task(const TaskSchedule& schedule, std::size_t position, double current_mass, Rng& rng) {
  if (position == 0 || rng.uniform() < current_mass) return schedule.order[position];
  return schedule.order[rng.index(position)];
}

RolloutBatch collect_training_batch(const PolicyNet& policy, const MazeEnv& env, const TaskSchedule& schedule,
                                    std::size_t position, double current_mass, std::size_t steps, Rng& rng) {
  RolloutBatch b;
  b.obs_dim = env.observation_dim();
  b.context_dim = env.context_dim();
  b.action_dim = policy.shape().action_dim;
  auto append = [](std::vector<double>& dst, std::span<const double> src) { dst.insert(dst.end(), src.begin(), src.end()); };
  while (b.size() < steps) {
    const std::size_t task = sample_episode_task(schedule, position, current_mass, rng);
    auto reset = env.reset(task, rng);
    const auto ctx = reset.context.as_vector();
    EpisodeSpan e;
    e.begin = b.size();
    e.task = task;
    e.initial_heading = reset.state.heading;
    AgentState state = reset.state;
    std::vector<double> obs = std::move(reset.observation);
    for (std::size_t t = 0;; ++t) {
      const auto ev = policy.evaluate(obs, ctx);
      const auto sample = sample_action(ev.mean, ev.log_std, rng);
      StepResult res = env.step(task, state, {sample.action[0], sample.action[1]}, t);
      append(b.observations, obs);
      append(b.contexts, ctx);
      append(b.actions, sample.action);
      b.log_probs.push_back(sample.log_prob);
      b.rewards.push_back(res.reward);
      b.values.push_back(ev.value);
      append(b.next_observations, res.observation);
      append(b.predicted_states, ev.next_state);
      b.terminal.push_back(res.done_reason == DoneReason::goal_touched ? 1 : 0);
      b.bootstrap.push_back(0.0);
      e.reward_sum += res.reward;
      const bool full = b.size() == steps;
      if (res.done_reason == DoneReason::time_limit || (full && !res.done)) {
        b.bootstrap.back() = policy.evaluate(res.observation, ctx).value;
      }
      if (res.done || full) {
        e.done_reason = res.done_reason;
        break;
      }
      state = res.next_state;
      obs = std::move(res.observation);
    }
    e.end = b.size();
    b.episodes.push_back(e);
  }
  return b;
}

std::vector<TrajectoryWindow> predicted_windows(const PolicyNet& policy, const RolloutBatch& batch,
                                                std::size_t length) {
  std::vector<TrajectoryWindow> out;
  const std::size_t D = batch.obs_dim;
  for (const auto& ref : episode_windows(batch, length)) {
    std::vector<double> states;
    states.reserve(ref.length * D);
    for (std::size_t t = ref.begin; t < ref.begin + ref.length; ++t) {
      const auto ev = policy.evaluate(batch.observation(t), batch.context(t));
      states.insert(states.end(), ev.next_state.begin(), ev.next_state.end());
    }
    out.push_back(make_window(states, D));
  }
  return out;
}

std::vector<TrajectoryWindow> real_windows(const RolloutBatch& batch, std::size_t length) {
  std::vector<TrajectoryWindow> out;
  const std::size_t D = batch.obs_dim;
  for (const auto& ref : episode_windows(batch, length)) {
    out.push_back(make_window({batch.next_observations.data() + ref.begin * D, ref.length * D}, D));
  }
  return out;
}

Trainer::Trainer(RunConfig config, std::filesystem::path out_dir)
    : config_(std::move(config)),
      out_dir_(std::move(out_dir)),
      env_((config_.validate(), load_suite(config_.suite)), config_.env),
      schedule_(TaskSchedule::even(env_.task_count(), config_.total_steps)),
      rng_(config_.seed),
      memory_(config_.memory_capacity, config_.ppo.gamma),
      disc_buffer_(std::max<std::size_t>(config_.disc_buffer, 1)) {
  PolicyShape ps{env_.observation_dim(), env_.context_dim(), 2, config_.policy_hidden};
  policy_ = PolicyNet(ps, rng_, true);
  disc_ = DiscriminatorNet({env_.observation_dim(), config_.disc_hidden, env_.task_count()}, rng_);
  adam_theta_ = AdamState::for_params(policy_.params());
  adam_phi_ = AdamState::for_params(disc_.params());
  next_eval_ = config_.eval_every;
  nlohmann::ordered_json header;
  header["format"] = kTrainLogFormat;
  header["version"] = kTrainLogVersion;
  header["ablation"] = config_.ablation.name();
  header["seed"] = config_.seed;
  header["total_steps"] = config_.total_steps;
  header["tasks"] = nlohmann::json::array();
  for (std::size_t i = 0; i < env_.task_count(); ++i) {
    header["tasks"].push_back({{"name", env_.task(i).maze.name()}, {"budget", schedule_.budgets[i]}});
  }
  append_log(header);
}

void Trainer::append_log(const nlohmann::ordered_json& record) {
  log_ += record.dump();
  log_ += '\n';
}

void Trainer::write_files() {
  if (out_dir_.empty()) return;
  std::filesystem::create_directories(out_dir_);
  std::ofstream out(out_dir_ / "train.log", flushed_ == 0 ? std::ios::binary | std::ios::trunc
                                                          : std::ios::binary | std::ios::app);
  if (!out) throw LoadError("cannot write " + (out_dir_ / "train.log").string());
  out.write(log_.data() + flushed_, static_cast<std::streamsize>(log_.size() - flushed_));
  if (!out) throw LoadError("write failed for " + (out_dir_ / "train.log").string());
  flushed_ = log_.size();
}

IterationStats Trainer::iterate() {
  if (finished()) throw UsageError("Trainer::iterate: schedule already complete");
  const std::size_t position = position_;
  const std::size_t task = schedule_.order[position];
  const std::size_t n =
      static_cast<std::size_t>(std::min<std::uint64_t>(config_.horizon, schedule_.budgets[position] - task_steps_));

  IterationStats stats;
  RolloutBatch batch =
      collect_training_batch(policy_, env_, schedule_, position, config_.current_task_mass, n, rng_);
  compute_advantages(batch, config_.ppo.gamma, config_.ppo.gae_lambda);

  PPOConfig ppo = config_.ppo;
  const bool de = config_.ablation.diversity;
  if (!de) {
    ppo.l1_coef = 0.0;
    ppo.diversity_coef = 0.0;
  }
  const DiversityTerm diversity{&disc_, episode_windows(batch, config_.disc_window)};
  stats.ppo = ppo_update(policy_, adam_theta_, batch, ppo, rng_, de ? &diversity : nullptr);

  if (de) {
    std::vector<TrajectoryWindow> windows = predicted_windows(policy_, batch, config_.disc_window);
    std::vector<std::size_t> tasks;
    for (const auto& e : batch.episodes) tasks.push_back(e.task);
    if (config_.disc_train_on_real) {
      auto real = real_windows(batch, config_.disc_window);
      windows.insert(windows.end(), std::make_move_iterator(real.begin()), std::make_move_iterator(real.end()));
      for (const auto& e : batch.episodes) tasks.push_back(e.task);
    }
    if (config_.disc_buffer > 0) {
      for (std::size_t i = 0; i < windows.size(); ++i) disc_buffer_.add(tasks[i], std::move(windows[i]));
      // A one-class problem carries no signal and only saturates the classifier.
      const std::size_t steps = disc_buffer_.task_count() > 1 ? config_.disc_steps : 0;
      for (std::size_t k = 0; k < steps; ++k) {
        std::vector<const TrajectoryWindow*> ptrs;
        std::vector<std::size_t> drawn;
        disc_buffer_.sample(config_.disc_batch, rng_, ptrs, drawn);
        stats.disc = discriminator_update(disc_, adam_phi_, ptrs, drawn, config_.alpha2, config_.disc_grad_clip);
      }
    } else {
      std::vector<const TrajectoryWindow*> ptrs;
      for (const auto& w : windows) ptrs.push_back(&w);
      for (std::size_t k = 0; k < config_.disc_steps; ++k) {
        stats.disc = discriminator_update(disc_, adam_phi_, ptrs, tasks, config_.alpha2, config_.disc_grad_clip);
      }
    }
  }

  global_step_ += n;
  task_steps_ += n;
  ++iteration_;
  if (config_.ablation.self_correction) {
    const CorrectionConfig cc{config_.ppo.gamma, config_.sc_window, config_.alpha3};
    stats.correction = self_correction_step(policy_, adam_theta_, disc_, adam_phi_, batch, memory_, cc, rng_,
                                            global_step_);
  }

  stats.iteration = iteration_;
  stats.step = global_step_;
  stats.task = position;
  stats.steps = n;
  for (const auto& e : batch.episodes) stats.mean_reward += e.reward_sum;
  stats.mean_reward /= static_cast<double>(batch.episodes.size());
  stats.entropy = gaussian_entropy(policy_.params().at("policy/log_std"));

  nlohmann::ordered_json rec;
  rec["kind"] = "update";
  rec["iteration"] = iteration_;
  rec["step"] = global_step_;
  rec["task"] = task;
  rec["maze"] = env_.task(task).maze.name();
  rec["episodes"] = batch.episodes.size();
  rec["mean_reward"] = stats.mean_reward;
  rec["entropy"] = stats.entropy;
  rec["policy_loss"] = stats.ppo.policy_loss;
  rec["value_loss"] = stats.ppo.value_loss;
  rec["diversity_loss"] = stats.ppo.diversity_loss;
  rec["l1_loss"] = stats.ppo.l1_loss;
  rec["disc_loss"] = stats.disc.loss;
  rec["disc_accuracy"] = stats.disc.accuracy;
  rec["gated_fraction"] = stats.correction.gated_fraction;
  rec["sc_policy_loss"] = stats.correction.policy_loss;
  rec["sc_disc_loss"] = stats.correction.disc_loss;
  rec["clip_fraction"] = stats.ppo.clip_fraction;
  rec["approx_kl"] = stats.ppo.approx_kl;
  rec["skipped_minibatches"] = stats.ppo.skipped_minibatches;
  append_log(rec);
  if (stats.ppo.skipped_minibatches > 0) {
    log_warn("iteration " + std::to_string(iteration_) + ": skipped " +
             std::to_string(stats.ppo.skipped_minibatches) + " non-finite minibatches");
  }

  if (task_steps_ == schedule_.budgets[position]) {
    ++position_;
    task_steps_ = 0;
  }

  if (config_.eval_every > 0 && global_step_ >= next_eval_) {
    const auto tasks = seen_tasks(schedule_, position);
    const RolloutOptions opt{config_.eval_episodes, derive_seed(config_.seed, kEvalStream, eval_count_), false,
                             false};
    const auto rollouts = collect_rollouts(policy_, env_, tasks, opt);
    const MetricsReport report = make_report(rollouts, env_);
    stats.eval_nsd = report.nsd;
    nlohmann::ordered_json ev;
    ev["kind"] = "eval";
    ev["step"] = global_step_;
    ev["tasks"] = tasks.size();
    ev["episodes"] = config_.eval_episodes;
    ev["nsd"] = report.nsd;
    ev["reward"] = report.average_reward;
    ev["sd"] = nlohmann::json::array();
    for (const auto& m : report.tasks) ev["sd"].push_back(m.shorten_distance);
    append_log(ev);
    ++eval_count_;
    while (next_eval_ <= global_step_) next_eval_ += config_.eval_every;
  }

  std::ostringstream msg;
  msg << "iter " << iteration_ << " step " << global_step_ << " task " << env_.task(task).maze.name()
      << " reward " << stats.mean_reward << " entropy " << stats.entropy;
  if (stats.eval_nsd) msg << " nsd " << *stats.eval_nsd;
  log_info(msg.str());
  return stats;
}

void Trainer::run(std::uint64_t max_iterations) {
  for (std::uint64_t k = 0; k < max_iterations && !finished(); ++k) {
    try {
      iterate();
    } catch (const NumericError& e) {
      write_files();
      if (!out_dir_.empty()) save_checkpoint(out_dir_ / "abort.ckpt");
      log_error(std::string("numeric failure, state saved: ") + e.what());
      throw;
    }
    if (finished()) {
      const MetricsReport report = final_evaluation();
      nlohmann::ordered_json fin;
      fin["kind"] = "final";
      fin["step"] = global_step_;
      fin["episodes"] = config_.final_eval_episodes;
      fin["nsd"] = report.nsd;
      fin["reward"] = report.average_reward;
      fin["sd"] = nlohmann::json::array();
      for (const auto& m : report.tasks) fin["sd"].push_back(m.shorten_distance);
      append_log(fin);
      write_files();
      if (!out_dir_.empty()) {
        save_checkpoint(out_dir_ / "latest.ckpt");
        save_checkpoint(out_dir_ / "final.ckpt");
      }
    } else if (config_.checkpoint_every > 0 && iteration_ % config_.checkpoint_every == 0) {
      write_files();
      if (!out_dir_.empty()) save_checkpoint(out_dir_ / "latest.ckpt");
    }
  }
  write_files();
}

MetricsReport Trainer::final_evaluation(std::vector<EvalRollout>* rollouts) const {
  std::vector<std::size_t> all(schedule_.order);
  const RolloutOptions opt{config_.final_eval_episodes, derive_seed(config_.seed, kFinalEvalStream), false, false};
  auto r = collect_rollouts(policy_, env_, all, opt);
  MetricsReport report = make_report(r, env_);
  if (rollouts) *rollouts = std::move(r);
  return report;
}

Container Trainer::checkpoint() const {
  Container c;
  const auto& ps = policy_.shape();
  const auto& ds = disc_.shape();
  c.put_u64("run/shape", {ps.obs_dim, ps.context_dim, ps.action_dim, ps.hidden, ds.input_dim, ds.hidden, ds.tasks});
  c.put("run/env", Tensor::vector(env_vector(config_.env)));
  c.put_u64("run/seed", config_.seed);
  c.put_u64("run/ablation", {config_.ablation.diversity ? 1u : 0u, config_.ablation.self_correction ? 1u : 0u});
  c.put_u64("run/progress", {global_step_, iteration_, position_, task_steps_, eval_count_, next_eval_, log_.size()});
  c.put_u64("rng", rng_.state());
  c.put_tree("theta/", policy_.params());
  c.put_tree("phi/", disc_.params());
  c.put_adam("adam_theta/", adam_theta_);
  c.put_adam("adam_phi/", adam_phi_);
  memory_.save(c, "memory/");
  disc_buffer_.save(c, "disc_buffer/");
  return c;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const { checkpoint().save(path); }

Trainer Trainer::resume(RunConfig config, const std::filesystem::path& checkpoint, std::filesystem::path out_dir) {
  const Container c = Container::load(checkpoint);
  Trainer t(std::move(config));
  const auto& ps = t.policy_.shape();
  const auto& ds = t.disc_.shape();
  const std::vector<std::uint64_t> shape{ps.obs_dim, ps.context_dim, ps.action_dim, ps.hidden,
                                         ds.input_dim, ds.hidden, ds.tasks};
  if (c.u64("run/shape") != shape) throw ConfigError("resume: checkpoint network shapes differ from the config/suite");
  if (c.tensor("run/env").storage() != env_vector(t.config_.env)) {
    throw ConfigError("resume: checkpoint environment parameters differ from the config");
  }
  if (c.u64_scalar("run/seed") != t.config_.seed) throw ConfigError("resume: checkpoint seed differs from the config");
  const auto& abl = c.u64("run/ablation");
  if (abl.size() != 2 || (abl[0] != 0) != t.config_.ablation.diversity ||
      (abl[1] != 0) != t.config_.ablation.self_correction) {
    throw ConfigError("resume: checkpoint ablation differs from the config");
  }
  const auto& prog = c.u64("run/progress");
  if (prog.size() != 7) throw LoadError("resume: malformed run/progress");
  t.global_step_ = prog[0];
  t.iteration_ = prog[1];
  t.position_ = prog[2];
  t.task_steps_ = prog[3];
  t.eval_count_ = prog[4];
  t.next_eval_ = prog[5];
  t.rng_.set_state(c.u64("rng"));
  t.policy_ = PolicyNet(ps, c.tree("theta/", t.policy_.params()));
  t.disc_ = DiscriminatorNet(ds, c.tree("phi/", t.disc_.params()));
  t.adam_theta_ = c.adam("adam_theta/", t.policy_.params());
  t.adam_phi_ = c.adam("adam_phi/", t.disc_.params());
  t.memory_ = ReplayMemory::load(c, "memory/");
  t.disc_buffer_ = WindowBuffer::load(c, "disc_buffer/");

  const std::size_t log_bytes = prog[6];
  t.out_dir_ = std::move(out_dir);
  if (!t.out_dir_.empty()) {
    std::ifstream in(t.out_dir_ / "train.log", std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.size() < log_bytes) {
      throw LoadError("resume: " + (t.out_dir_ / "train.log").string() + " is shorter than the checkpoint expects");
    }
    text.resize(log_bytes);
    t.log_ = std::move(text);
    t.flushed_ = 0;
    t.write_files();
  } else {
    t.log_.clear();
    t.flushed_ = 0;
  }
  return t;
}

PolicyNet load_policy(const Container& c, const MazeEnv& env) {
  const auto& s = c.u64("run/shape");
  if (s.size() != 7) throw LoadError("checkpoint: malformed run/shape");
  if (s[0] != env.observation_dim() || s[1] != env.context_dim()) {
    throw ConfigError("checkpoint policy expects observation dim " + std::to_string(s[0]) + " and context dim " +
                      std::to_string(s[1]) + " (" + std::to_string(s[1] - 1) + " tasks), but the suite gives " +
                      std::to_string(env.observation_dim()) + " and " + std::to_string(env.context_dim()) + " (" +
                      std::to_string(env.task_count()) + " tasks)");
  }
  const PolicyShape shape{s[0], s[1], s[2], s[3]};
  Rng rng(0);
  const PolicyNet like(shape, rng);
  return PolicyNet(shape, c.tree("theta/", like.params()));
}

DiscriminatorNet load_discriminator(const Container& c) {
  const auto& s = c.u64("run/shape");
  if (s.size() != 7) throw LoadError("checkpoint: malformed run/shape");
  const DiscriminatorShape shape{s[4], s[5], s[6]};
  Rng rng(0);
  const DiscriminatorNet like(shape, rng);
  return DiscriminatorNet(shape, c.tree("phi/", like.params()));
}

EnvParams load_env_params(const Container& c) {
  const auto& v = c.tensor("run/env");
  if (v.size() != 9) throw LoadError("checkpoint: malformed run/env");
  EnvParams p;
  p.eta = v[0];
  p.dt = v[1];
  p.v_max = v[2];
  p.omega_max = v[3];
  p.accel_max = v[4];
  p.goal_radius = v[5];
  p.step_limit = static_cast<std::size_t>(v[6]);
  p.ray_count = static_cast<std::size_t>(v[7]);
  p.ray_range = v[8];
  return p;
}

std::vector<nlohmann::json> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open train log " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (lineno == 1 && (j.value("format", "") != kTrainLogFormat || j.value("version", 0) != kTrainLogVersion)) {
      throw LoadError(path.string() + ": not a version 1 train log");
    }
    out.push_back(std::move(j));
  }
  if (out.empty()) throw LoadError(path.string() + ": empty train log");
  return out;
}

}  // namespace cdan
