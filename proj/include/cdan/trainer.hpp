#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdan/adam.hpp"
#include "cdan/config.hpp"
#include "cdan/container.hpp"
#include "cdan/discriminator.hpp"
#include "cdan/env.hpp"
#include "cdan/evaluation.hpp"
#include "cdan/policy.hpp"
#include "cdan/replay.hpp"
#include "cdan/rng.hpp"

#include <json.hpp>

namespace cdan {

// Tasks in curriculum order with their step budgets.
struct TaskSchedule {
  std::vector<std::size_t> order;
  std::vector<std::uint64_t> budgets;

  // Splits total as evenly as possible; earlier tasks absorb the remainder.
  static TaskSchedule even(std::size_t tasks, std::uint64_t total);
  std::uint64_t total() const;
};

// Mean differential entropy of a diagonal Gaussian over rows of log_std [B x A].
double entropy_telemetry(std::span<const double> log_std, std::size_t action_dim);

// Samples the task of the next episode while training on schedule position i:
// the current task with probability `current_mass`, else an earlier one uniformly.
std::size_t sample_episode_task(const TaskSchedule& schedule, std::size_t position, double current_mass, Rng& rng);

// Fresh episodes until exactly `steps` transitions are recorded; the final
// episode is cut there and bootstraps from V(s_next), as do time-limit ends.
RolloutBatch collect_training_batch(const PolicyNet& policy, const MazeEnv& env, const TaskSchedule& schedule,
                                    std::size_t position, double current_mass, std::size_t steps, Rng& rng);

// Windows of the policy's next-state predictions (tau_hat) and of the real next
// states (tau) for each episode of the batch, truncated to `length`.
std::vector<TrajectoryWindow> predicted_windows(const PolicyNet& policy, const RolloutBatch& batch, std::size_t length);
std::vector<TrajectoryWindow> real_windows(const RolloutBatch& batch, std::size_t length);

inline constexpr const char* kTrainLogFormat = "cdan-trainlog";
inline constexpr int kTrainLogVersion = 1;

struct IterationStats {
  std::uint64_t iteration = 0;
  std::uint64_t step = 0;  // global steps after this iteration
  std::size_t task = 0;    // schedule position
  std::size_t steps = 0;
  double mean_reward = 0.0;  // mean episode reward sum of the batch
  double entropy = 0.0;
  PPOStats ppo;
  DiscriminatorUpdateStats disc;
  CorrectionStats correction;
  std::optional<double> eval_nsd;
};

// The continual training loop with the configured ablation. One iterate() is one
// pass: collect, PPO with the diversity and L1 terms, discriminator step, self-correction.
class Trainer {
 public:
  // out_dir may be empty: nothing is written to disk.
  Trainer(RunConfig config, std::filesystem::path out_dir = {});
  // Restores everything from a checkpoint written by the same configuration.
  static Trainer resume(RunConfig config, const std::filesystem::path& checkpoint,
                        std::filesystem::path out_dir = {});

  bool finished() const { return position_ >= schedule_.order.size(); }
  IterationStats iterate();
  // Runs until finished or max_iterations more iterations, checkpointing on cadence.
  void run(std::uint64_t max_iterations = UINT64_MAX);
  // T = final_eval_episodes over all tasks.
  MetricsReport final_evaluation(std::vector<EvalRollout>* rollouts = nullptr) const;

  Container checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const;

  const RunConfig& config() const { return config_; }
  const TaskSchedule& schedule() const { return schedule_; }
  const MazeEnv& env() const { return env_; }
  const PolicyNet& policy() const { return policy_; }
  PolicyNet& policy() { return policy_; }
  const DiscriminatorNet& discriminator() const { return disc_; }
  const ReplayMemory& memory() const { return memory_; }
  const WindowBuffer& disc_buffer() const { return disc_buffer_; }
  std::uint64_t global_step() const { return global_step_; }
  std::uint64_t iteration() const { return iteration_; }
  std::size_t schedule_position() const { return position_; }
  const std::string& log_text() const { return log_; }

 private:
  void append_log(const nlohmann::ordered_json& record);
  void write_files();

  RunConfig config_;
  std::filesystem::path out_dir_;
  MazeEnv env_;
  TaskSchedule schedule_;
  Rng rng_;
  PolicyNet policy_;
  DiscriminatorNet disc_;
  AdamState adam_theta_;
  AdamState adam_phi_;
  ReplayMemory memory_;
  WindowBuffer disc_buffer_;
  std::uint64_t global_step_ = 0;
  std::uint64_t iteration_ = 0;
  std::size_t position_ = 0;
  std::uint64_t task_steps_ = 0;
  std::uint64_t eval_count_ = 0;
  std::uint64_t next_eval_ = 0;
  std::string log_;
  std::size_t flushed_ = 0;
};

// Policy restored from a checkpoint; throws ConfigError naming any mismatch
// with the environment's observation/context dimensions.
PolicyNet load_policy(const Container& checkpoint, const MazeEnv& env);
DiscriminatorNet load_discriminator(const Container& checkpoint);
EnvParams load_env_params(const Container& checkpoint);

std::vector<nlohmann::json> read_train_log(const std::filesystem::path& path);

}  // namespace cdan
