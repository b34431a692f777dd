#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdan/container.hpp"
#include "cdan/discriminator.hpp"
#include "cdan/policy.hpp"

namespace cdan {

class Rng;

struct MemoryEntry {
  std::size_t task = 0;
  int bucket = 0;
  TrajectoryWindow window;      // real states s_1 .. s_L
  std::vector<double> rewards;  // r_0 .. r_{L-1}
  std::vector<double> context;
  double discounted_return = 0.0;  // sum_i gamma^i r_i over the window
  std::uint64_t inserted_at = 0;
};

double discounted_return(std::span<const double> rewards, double gamma);

// Self-correction fires only when the memory trajectory did strictly better.
inline bool gate(double current_return, double memory_return) { return memory_return > current_return; }

// Trajectory memory with one FIFO ring per (task, start-heading bucket).
class ReplayMemory {
 public:
  using Key = std::pair<std::size_t, int>;

  explicit ReplayMemory(std::size_t capacity = 64, double gamma = 0.99);

  // Keyed by heading_bucket(initial_heading); the return is computed here.
  void store(std::size_t task, double initial_heading, TrajectoryWindow window, std::vector<double> rewards,
             std::vector<double> context, std::uint64_t step);
  // Uniform draw from the matching bucket; nullptr when it is empty.
  const MemoryEntry* sample_matched(std::size_t task, int bucket, Rng& rng) const;

  std::size_t size() const;
  std::size_t bucket_size(std::size_t task, int bucket) const;
  const std::deque<MemoryEntry>* bucket(std::size_t task, int bucket) const;
  std::size_t capacity() const { return capacity_; }
  double gamma() const { return gamma_; }

  void save(Container& out, const std::string& prefix = "memory/") const;
  static ReplayMemory load(const Container& in, const std::string& prefix = "memory/");

  friend bool operator==(const ReplayMemory& a, const ReplayMemory& b);

 private:
  std::size_t capacity_;
  double gamma_;
  std::map<Key, std::deque<MemoryEntry>> buckets_;
};

struct CorrectionConfig {
  double gamma = 0.99;
  std::size_t window = 100;  // self-correction length
  double lr = 1e-3;          // alpha_3
};

// Current predicted window paired with a matched memory trajectory.
struct CorrectionPair {
  WindowRef current;
  double current_return = 0.0;
  const MemoryEntry* memory = nullptr;
  double memory_return = 0.0;
  bool gated = false;
};

// For every episode in the batch, samples a matched memory entry (same task and
// heading bucket) and evaluates the gate over the first min(len, len', window) rewards.
std::vector<CorrectionPair> match_pairs(const RolloutBatch& batch, const ReplayMemory& memory,
                                        const CorrectionConfig& cfg, Rng& rng);

// Mean over rows of -sum_k label_k log p_k (policy side) and its negation
// (discriminator side). Labels are constants.
Var correction_policy_loss(Var logits_hat, const Tensor& soft_labels);
Var correction_disc_loss(Var logits_hat, const Tensor& soft_labels);
double soft_cross_entropy(std::span<const double> probs, std::span<const double> labels);

// Soft labels D(tau') for the memory side of the pairs, [B x tasks].
Tensor soft_labels(const DiscriminatorNet& disc, const std::vector<const CorrectionPair*>& pairs);

// One Adam step on theta (discriminator frozen); returns the loss before the step.
double correction_policy_step(PolicyNet& policy, AdamState& adam, const DiscriminatorNet& disc,
                              const RolloutBatch& batch, const std::vector<const CorrectionPair*>& pairs,
                              const Tensor& labels, double lr);
// One Adam step on phi (predicted states held constant); returns the loss before the step.
double correction_disc_step(const PolicyNet& policy, DiscriminatorNet& disc, AdamState& adam,
                            const RolloutBatch& batch, const std::vector<const CorrectionPair*>& pairs,
                            const Tensor& labels, double lr);
// Current imitation cross-entropy for the pairs, no update.
double correction_cross_entropy(const PolicyNet& policy, const DiscriminatorNet& disc, const RolloutBatch& batch,
                                const std::vector<const CorrectionPair*>& pairs, const Tensor& labels);

struct CorrectionStats {
  std::size_t pairs = 0;  // episodes with a matched memory entry
  std::size_t gated = 0;
  double gated_fraction = 0.0;  // gated / episodes in the batch
  double policy_loss = 0.0;
  double disc_loss = 0.0;
  std::size_t stored = 0;
};

// Matches against the memory as it stood before this batch, applies the theta
// step then the phi step on gated pairs, and finally stores the batch's episodes.
CorrectionStats self_correction_step(PolicyNet& policy, AdamState& adam_policy, DiscriminatorNet& disc,
                                     AdamState& adam_disc, const RolloutBatch& batch, ReplayMemory& memory,
                                     const CorrectionConfig& cfg, Rng& rng, std::uint64_t step);

// Stores every episode of the batch (window of real next-states, rewards, context).
std::size_t store_episodes(ReplayMemory& memory, const RolloutBatch& batch, std::size_t window, std::uint64_t step);

}  // namespace cdan
