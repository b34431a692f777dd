#pragma once

#include <vector>

#include "cdan/policy.hpp"
#include "cdan/rng.hpp"

namespace cdan::testing {

inline constexpr std::size_t kObs = 5, kCtx = 3, kAct = 2;

inline PolicyShape small_shape(std::size_t hidden = 8) { return {kObs, kCtx, kAct, hidden}; }

// Random rollout with the given episode lengths; the last episode is cut.
// Episode e belongs to task e % kCtx and starts with heading `headings[e]` if given.
inline RolloutBatch synthetic_batch(const std::vector<std::size_t>& lengths, Rng& rng,
                                    const std::vector<double>& headings = {}) {
  RolloutBatch b;
  b.obs_dim = kObs;
  b.context_dim = kCtx;
  b.action_dim = kAct;
  std::size_t pos = 0;
  for (std::size_t e = 0; e < lengths.size(); ++e) {
    EpisodeSpan span;
    span.begin = pos;
    span.end = pos + lengths[e];
    span.task = e % kCtx;
    span.initial_heading = e < headings.size() ? headings[e] : 0.0;
    span.done_reason = e + 1 == lengths.size() ? DoneReason::none : DoneReason::goal_touched;
    for (std::size_t t = span.begin; t < span.end; ++t) {
      for (std::size_t d = 0; d < kObs; ++d) b.observations.push_back(rng.uniform(-1, 1));
      for (std::size_t d = 0; d < kCtx; ++d) b.contexts.push_back(d == span.task ? 1.0 : 0.0);
      for (std::size_t d = 0; d < kAct; ++d) b.actions.push_back(rng.normal());
      b.log_probs.push_back(-2.0 + 0.1 * rng.normal());
      b.rewards.push_back(rng.uniform(-1, 1));
      span.reward_sum += b.rewards.back();
      b.values.push_back(rng.uniform(-1, 1));
      for (std::size_t d = 0; d < kObs; ++d) b.next_observations.push_back(rng.uniform(-1, 1));
      const bool last = t + 1 == span.end;
      b.terminal.push_back(last && span.done_reason == DoneReason::goal_touched);
      b.bootstrap.push_back(last && span.done_reason == DoneReason::none ? 0.7 : 0.0);
    }
    b.episodes.push_back(span);
    pos = span.end;
  }
  return b;
}

// Sets log_probs to the current policy's density so ratios start at 1.
inline void refresh_log_probs(const PolicyNet& policy, RolloutBatch& b) {
  for (std::size_t t = 0; t < b.size(); ++t) {
    const auto e = policy.evaluate(b.observation(t), b.context(t));
    b.log_probs[t] = gaussian_log_prob({b.actions.data() + t * b.action_dim, b.action_dim}, e.mean, e.log_std);
  }
}

}  // namespace cdan::testing
