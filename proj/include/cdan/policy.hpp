#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cdan/adam.hpp"
#include "cdan/autodiff.hpp"
#include "cdan/discriminator.hpp"
#include "cdan/env.hpp"

namespace cdan {

class Rng;

struct PolicyShape {
  std::size_t obs_dim = 0;
  std::size_t context_dim = 0;
  std::size_t action_dim = 2;
  std::size_t hidden = 64;

  std::size_t input_dim() const { return obs_dim + context_dim; }
  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

// Context-conditioned policy: a two-layer tanh trunk over [s_{t-1}, c] shared by
// a Gaussian action head (free log_std), a next-state head and a value head.
class PolicyNet {
 public:
  struct Outputs {
    Var mean;        // [B x A]
    Var log_std;     // [A]
    Var next_state;  // [B x obs_dim]
    Var value;       // [B]
  };

  struct Eval {
    std::vector<double> mean;
    std::vector<double> log_std;
    std::vector<double> next_state;
    double value = 0.0;
  };

  PolicyNet() = default;
  PolicyNet(PolicyShape shape, Rng& rng, bool zero_heads = false);
  PolicyNet(PolicyShape shape, ParamTree params);

  const PolicyShape& shape() const { return shape_; }
  ParamTree& params() { return params_; }
  const ParamTree& params() const { return params_; }

  // inputs: [B x (obs_dim + context_dim)].
  Outputs forward(const ParamBinding& theta, Var inputs) const;
  // Single-row forward without a tape; matches forward() bit for bit.
  Eval evaluate(std::span<const double> obs, std::span<const double> context) const;

 private:
  PolicyShape shape_;
  ParamTree params_;
};

struct ActionSample {
  std::vector<double> action;  // raw Gaussian sample; clamp before sending to the env
  double log_prob = 0.0;
};

// a = mean + exp(log_std) * xi, xi ~ N(0, I).
ActionSample sample_action(std::span<const double> mean, std::span<const double> log_std, Rng& rng);
double gaussian_log_prob(std::span<const double> a, std::span<const double> mean, std::span<const double> log_std);

struct EpisodeSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last step
  std::size_t task = 0;
  double initial_heading = 0.0;
  DoneReason done_reason = DoneReason::none;  // none: cut by the rollout horizon
  double reward_sum = 0.0;
  std::size_t length() const { return end - begin; }
};

// Per-step arrays of one rollout. Row t holds s_t (observation), c, the raw
// action, its behaviour log-prob, r_t, V(s_t), s_{t+1} and the prediction of it.
struct RolloutBatch {
  std::size_t obs_dim = 0;
  std::size_t context_dim = 0;
  std::size_t action_dim = 0;

  std::vector<double> observations;
  std::vector<double> contexts;
  std::vector<double> actions;
  std::vector<double> log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> next_observations;
  std::vector<double> predicted_states;
  std::vector<std::uint8_t> terminal;  // 1 where the goal was touched
  std::vector<double> bootstrap;       // V(s_{t+1}) at the last step of a truncated episode, else 0
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<EpisodeSpan> episodes;

  std::size_t size() const { return rewards.size(); }
  std::span<const double> observation(std::size_t t) const { return {observations.data() + t * obs_dim, obs_dim}; }
  std::span<const double> context(std::size_t t) const { return {contexts.data() + t * context_dim, context_dim}; }
  // Throws UsageError if arrays disagree in length or episodes do not partition them.
  void validate() const;
};

// Unnormalized GAE(gamma, lambda). Terminal steps bootstrap with 0; the last step
// of a non-terminal episode bootstraps with `bootstrap`.
std::vector<double> gae_advantages(const RolloutBatch& batch, double gamma, double lambda);
// Fills returns (A + V) and batch-normalized advantages (mean 0, std 1).
void compute_advantages(RolloutBatch& batch, double gamma, double lambda);
void normalize(std::vector<double>& values);

// Sum over steps and dimensions of |predicted - real|.
Var prediction_l1(Var predicted, Var real);
double prediction_l1(std::span<const double> predicted, std::span<const double> real);

struct PPOConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  std::size_t epochs = 4;
  std::size_t minibatch = 32;
  double lr = 1e-3;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double l1_coef = 0.1;
  double diversity_coef = 0.5;

  void validate() const;
};

// The first steps of one episode in a RolloutBatch, used as a predicted window.
struct WindowRef {
  std::size_t begin = 0;
  std::size_t length = 0;
  std::size_t task = 0;
};

std::vector<WindowRef> episode_windows(const RolloutBatch& batch, std::size_t max_length = TrajectoryWindow::kLength);

// Predicted-state windows for `refs`, recomputed through theta on `tape` so the
// discriminator's gradient reaches the policy. Returns per-step inputs [B x obs_dim].
std::vector<Var> predicted_window_steps(const PolicyNet& policy, const ParamBinding& theta,
                                        const RolloutBatch& batch, const std::vector<WindowRef>& refs);

// Diversity term for the policy side: the discriminator is frozen.
struct DiversityTerm {
  const DiscriminatorNet* discriminator = nullptr;
  std::vector<WindowRef> windows;
};

struct PPOStats {
  double policy_loss = 0.0;  // -L_clip
  double value_loss = 0.0;
  double entropy = 0.0;
  double l1_loss = 0.0;         // per-step sum of |s_hat - s|, averaged over samples
  double diversity_loss = 0.0;  // mean -log D(tau_hat)[task]
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  std::size_t minibatches = 0;
  std::size_t skipped_minibatches = 0;
};

struct LossTerms {
  Var total;
  Var surrogate;
  Var value_loss;
  Var entropy;
  Var l1;         // invalid when the L1 coefficient is 0
  Var diversity;  // invalid when no diversity term is active
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// Builds the joint loss
//   -L_clip + c_v (V - R)^2 - c_e H + c_L1 L1 + c_div (-log D(tau_hat)[k])
// for minibatch rows `idx` and predicted windows `windows`.
LossTerms ppo_loss(const PolicyNet& policy, const ParamBinding& theta, const RolloutBatch& batch,
                   const std::vector<std::size_t>& idx, const PPOConfig& cfg, const DiversityTerm* diversity,
                   const std::vector<WindowRef>& windows);

// Clipped-surrogate update over cfg.epochs shuffled passes. Predicted windows are
// spread round-robin over the minibatches of each epoch. Requires advantages.
PPOStats ppo_update(PolicyNet& policy, AdamState& adam, const RolloutBatch& batch, const PPOConfig& cfg, Rng& rng,
                    const DiversityTerm* diversity = nullptr);

}  // namespace cdan
