#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cdan/env.hpp"
#include "cdan/policy.hpp"

namespace cdan {

struct Ablation {
  bool diversity = true;        // discriminator loss on both networks and the L1 prediction term
  bool self_correction = true;  // memory and the gated adversarial step

  // baseline | de | sc | de+sc
  static Ablation parse(std::string_view name);
  std::string name() const;
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct RunConfig {
  std::filesystem::path suite;
  std::uint64_t total_steps = 150000;
  std::size_t horizon = 512;
  std::uint64_t seed = 0;
  Ablation ablation;

  PPOConfig ppo;           // gamma, clip_range, alpha1, batch_size, ...
  double alpha2 = 1e-3;    // discriminator learning rate
  double alpha3 = 1e-3;    // self-correction learning rate
  std::size_t disc_window = 100;  // L_d
  std::size_t disc_hidden = 64;   // H_d
  std::size_t policy_hidden = 64; // H_p
  std::size_t disc_steps = 5;
  std::size_t disc_buffer = 32;  // recent windows kept per task; 0 trains on the current batch only
  std::size_t disc_batch = 16;   // windows per update when buffered
  double disc_grad_clip = 1.0;   // global gradient norm cap for phi; 0 disables
  bool disc_train_on_real = false;
  std::size_t sc_window = 100;
  std::size_t memory_capacity = 64;
  double current_task_mass = 0.5;

  EnvParams env;

  std::uint64_t eval_every = 10000;
  std::size_t eval_episodes = 10;
  std::size_t final_eval_episodes = 50;
  std::size_t checkpoint_every = 20;  // iterations

  void validate() const;
};

// Flat "key = value" text. The first non-comment line must be "cdan-config 1";
// '#' starts a comment. Relative suite paths resolve against `base_dir`.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);
// Applies one "key=value" override.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value,
                   const std::filesystem::path& base_dir = {});
std::string format_config(const RunConfig& cfg);

}  // namespace cdan
