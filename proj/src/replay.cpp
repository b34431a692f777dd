#include "cdan/replay.hpp"

#include <algorithm>
#include <cmath>

#include "cdan/env.hpp"
#include "cdan/errors.hpp"
#include "cdan/rng.hpp"

namespace cdan {

double discounted_return(std::span<const double> rewards, double gamma) {
  double g = 0.0, w = 1.0;
  for (double r : rewards) {
    g += w * r;
    w *= gamma;
  }
  return g;
}

ReplayMemory::ReplayMemory(std::size_t capacity, double gamma) : capacity_(capacity), gamma_(gamma) {
  if (capacity_ == 0) throw ConfigError("ReplayMemory: capacity must be positive");
}

void ReplayMemory::store(std::size_t task, double initial_heading, TrajectoryWindow window,
                         std::vector<double> rewards, std::vector<double> context, std::uint64_t step) {
  if (window.length == 0 || rewards.size() != window.length) {
    throw UsageError("ReplayMemory::store: need one reward per unmasked window step");
  }
  MemoryEntry e;
  e.task = task;
  e.bucket = heading_bucket(initial_heading);
  e.discounted_return = discounted_return(rewards, gamma_);
  e.window = std::move(window);
  e.rewards = std::move(rewards);
  e.context = std::move(context);
  e.inserted_at = step;
  auto& ring = buckets_[{task, e.bucket}];
  ring.push_back(std::move(e));
  while (ring.size() > capacity_) ring.pop_front();
}

const MemoryEntry* ReplayMemory::sample_matched(std::size_t task, int bucket, Rng& rng) const {
  const auto it = buckets_.find({task, bucket});
  if (it == buckets_.end() || it->second.empty()) return nullptr;
  return &it->second[rng.index(it->second.size())];
}

std::size_t ReplayMemory::size() const {
  std::size_t n = 0;
  for (const auto& [key, ring] : buckets_) n += ring.size();
  return n;
}

std::size_t ReplayMemory::bucket_size(std::size_t task, int bucket) const {
  const auto* b = this->bucket(task, bucket);
  return b ? b->size() : 0;
}

const std::deque<MemoryEntry>* ReplayMemory::bucket(std::size_t task, int bucket) const {
  const auto it = buckets_.find({task, bucket});
  return it == buckets_.end() ? nullptr : &it->second;
}

void ReplayMemory::save(Container& out, const std::string& prefix) const {
  out.put_u64(prefix + "capacity", capacity_);
  out.put_f64(prefix + "gamma", gamma_);
  out.put_u64(prefix + "count", size());
  std::size_t k = 0;
  for (const auto& [key, ring] : buckets_) {
    for (const auto& e : ring) {
      const std::string p = prefix + "e" + std::to_string(k++) + "/";
      out.put_u64(p + "meta", {e.task, static_cast<std::uint64_t>(e.bucket), e.window.length, e.window.dim,
                               e.inserted_at});
      out.put(p + "states", Tensor({e.window.length, e.window.dim},
                                   std::vector<double>(e.window.states.begin(),
                                                       e.window.states.begin() +
                                                           static_cast<std::ptrdiff_t>(e.window.length * e.window.dim))));
      out.put(p + "rewards", Tensor::vector(e.rewards));
      out.put(p + "context", Tensor::vector(e.context));
      out.put_f64(p + "return", e.discounted_return);
    }
  }
}

ReplayMemory ReplayMemory::load(const Container& in, const std::string& prefix) {
  ReplayMemory m(in.u64_scalar(prefix + "capacity"), in.f64_scalar(prefix + "gamma"));
  const std::size_t count = in.u64_scalar(prefix + "count");
  for (std::size_t k = 0; k < count; ++k) {
    const std::string p = prefix + "e" + std::to_string(k) + "/";
    const auto& meta = in.u64(p + "meta");
    if (meta.size() != 5) throw LoadError("memory: malformed entry " + p);
    MemoryEntry e;
    e.task = meta[0];
    e.bucket = static_cast<int>(meta[1]);
    e.window = make_window(in.tensor(p + "states").values(), meta[3]);
    if (e.window.length != meta[2]) throw LoadError("memory: window length mismatch in " + p);
    e.inserted_at = meta[4];
    const auto& r = in.tensor(p + "rewards");
    e.rewards.assign(r.data(), r.data() + r.size());
    const auto& c = in.tensor(p + "context");
    e.context.assign(c.data(), c.data() + c.size());
    e.discounted_return = in.f64_scalar(p + "return");
    m.buckets_[{e.task, e.bucket}].push_back(std::move(e));
  }
  return m;
}

bool operator==(const ReplayMemory& a, const ReplayMemory& b) {
  if (a.capacity_ != b.capacity_ || a.gamma_ != b.gamma_ || a.buckets_.size() != b.buckets_.size()) return false;
  auto ia = a.buckets_.begin();
  auto ib = b.buckets_.begin();
  for (; ia != a.buckets_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.size() != ib->second.size()) return false;
    for (std::size_t i = 0; i < ia->second.size(); ++i) {
      const auto& x = ia->second[i];
      const auto& y = ib->second[i];
      if (x.task != y.task || x.bucket != y.bucket || x.window.length != y.window.length ||
          x.window.states != y.window.states || x.rewards != y.rewards || x.context != y.context ||
          x.discounted_return != y.discounted_return || x.inserted_at != y.inserted_at) {
        return false;
      }
    }
  }
  return true;
}

std::vector<CorrectionPair> match_pairs(const RolloutBatch& batch, const ReplayMemory& memory,
                                        const CorrectionConfig& cfg, Rng& rng) {
  std::vector<CorrectionPair> pairs;
  for (const auto& e : batch.episodes) {
    const MemoryEntry* m = memory.sample_matched(e.task, heading_bucket(e.initial_heading), rng);
    if (!m) continue;
    CorrectionPair p;
    p.current = {e.begin, std::min(e.length(), cfg.window), e.task};
    p.memory = m;
    const std::size_t aligned = std::min({e.length(), m->rewards.size(), cfg.window});
    p.current_return = discounted_return(
        std::span<const double>(batch.rewards.data() + e.begin, aligned), cfg.gamma);
    p.memory_return = discounted_return(std::span<const double>(m->rewards.data(), aligned), cfg.gamma);
    p.gated = gate(p.current_return, p.memory_return);
    pairs.push_back(p);
  }
  return pairs;
}

namespace {

Var weighted_log_likelihood(Var logits_hat, const Tensor& soft_labels) {
  if (logits_hat.shape() != soft_labels.shape()) {
    throw UsageError("correction loss: labels " + shape_string(soft_labels.shape()) + " vs logits " +
                     shape_string(logits_hat.shape()));
  }
  Tape& tape = *logits_hat.tape();
  Var lp = clamped_log_probs(logits_hat);
  return ad::mean(ad::row_sum(ad::mul(tape.constant(soft_labels), lp)));
}

std::vector<WindowRef> current_refs(const std::vector<const CorrectionPair*>& pairs) {
  std::vector<WindowRef> refs;
  for (const auto* p : pairs) refs.push_back(p->current);
  return refs;
}

std::vector<std::size_t> ref_lengths(const std::vector<WindowRef>& refs) {
  std::vector<std::size_t> out;
  for (const auto& r : refs) out.push_back(r.length);
  return out;
}

}  // namespace

Var correction_policy_loss(Var logits_hat, const Tensor& soft_labels) {
  return ad::neg(weighted_log_likelihood(logits_hat, soft_labels));
}

Var correction_disc_loss(Var logits_hat, const Tensor& soft_labels) {
  return weighted_log_likelihood(logits_hat, soft_labels);
}

double soft_cross_entropy(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw UsageError("soft_cross_entropy: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) s -= labels[k] * std::log(std::max(probs[k], kProbFloor));
  return s;
}

Tensor soft_labels(const DiscriminatorNet& disc, const std::vector<const CorrectionPair*>& pairs) {
  std::vector<const TrajectoryWindow*> windows;
  for (const auto* p : pairs) windows.push_back(&p->memory->window);
  const auto probs = disc.discriminate(windows);
  const std::size_t K = disc.shape().tasks;
  Tensor labels({pairs.size(), K});
  for (std::size_t r = 0; r < probs.size(); ++r) std::copy(probs[r].begin(), probs[r].end(), labels.data() + r * K);
  return labels;
}

double correction_policy_step(PolicyNet& policy, AdamState& adam, const DiscriminatorNet& disc,
                              const RolloutBatch& batch, const std::vector<const CorrectionPair*>& pairs,
                              const Tensor& labels, double lr) {
  if (pairs.empty()) throw UsageError("correction_policy_step: no pairs");
  Tape tape;
  const ParamBinding theta = tape.bind(policy.params(), true);
  const ParamBinding phi = tape.bind(disc.params(), false);
  const auto refs = current_refs(pairs);
  Var loss = correction_policy_loss(disc.logits(phi, predicted_window_steps(policy, theta, batch, refs),
                                                ref_lengths(refs)),
                                    labels);
  tape.backward(loss);
  adam_step(policy.params(), tape.gradients(theta), adam, lr);
  return loss.value().item();
}

double correction_disc_step(const PolicyNet& policy, DiscriminatorNet& disc, AdamState& adam,
                            const RolloutBatch& batch, const std::vector<const CorrectionPair*>& pairs,
                            const Tensor& labels, double lr) {
  if (pairs.empty()) throw UsageError("correction_disc_step: no pairs");
  Tape tape;
  const ParamBinding theta = tape.bind(policy.params(), false);
  const ParamBinding phi = tape.bind(disc.params(), true);
  const auto refs = current_refs(pairs);
  Var loss = correction_disc_loss(disc.logits(phi, predicted_window_steps(policy, theta, batch, refs),
                                              ref_lengths(refs)),
                                  labels);
  tape.backward(loss);
  adam_step(disc.params(), tape.gradients(phi), adam, lr);
  return loss.value().item();
}

double correction_cross_entropy(const PolicyNet& policy, const DiscriminatorNet& disc, const RolloutBatch& batch,
                                const std::vector<const CorrectionPair*>& pairs, const Tensor& labels) {
  Tape tape;
  const ParamBinding theta = tape.bind(policy.params(), false);
  const ParamBinding phi = tape.bind(disc.params(), false);
  const auto refs = current_refs(pairs);
  return correction_policy_loss(disc.logits(phi, predicted_window_steps(policy, theta, batch, refs),
                                            ref_lengths(refs)),
                                labels)
      .value()
      .item();
}

std::size_t store_episodes(ReplayMemory& memory, const RolloutBatch& batch, std::size_t window, std::uint64_t step) {
  const std::size_t D = batch.obs_dim;
  for (const auto& e : batch.episodes) {
    const std::size_t L = std::min(e.length(), window);
    TrajectoryWindow w = make_window(
        std::span<const double>(batch.next_observations.data() + e.begin * D, L * D), D);
    std::vector<double> rewards(batch.rewards.begin() + static_cast<std::ptrdiff_t>(e.begin),
                                batch.rewards.begin() + static_cast<std::ptrdiff_t>(e.begin + w.length));
    const auto c = batch.context(e.begin);
    memory.store(e.task, e.initial_heading, std::move(w), std::move(rewards), {c.begin(), c.end()}, step);
  }
  return batch.episodes.size();
}

CorrectionStats self_correction_step(PolicyNet& policy, AdamState& adam_policy, DiscriminatorNet& disc,
                                     AdamState& adam_disc, const RolloutBatch& batch, ReplayMemory& memory,
                                     const CorrectionConfig& cfg, Rng& rng, std::uint64_t step) {
  CorrectionStats stats;
  const auto pairs = match_pairs(batch, memory, cfg, rng);
  std::vector<const CorrectionPair*> gated;
  for (const auto& p : pairs) {
    if (p.gated) gated.push_back(&p);
  }
  stats.pairs = pairs.size();
  stats.gated = gated.size();
  stats.gated_fraction =
      batch.episodes.empty() ? 0.0 : static_cast<double>(gated.size()) / static_cast<double>(batch.episodes.size());
  if (!gated.empty()) {
    const Tensor labels = soft_labels(disc, gated);
    stats.policy_loss = correction_policy_step(policy, adam_policy, disc, batch, gated, labels, cfg.lr);
    stats.disc_loss = correction_disc_step(policy, disc, adam_disc, batch, gated, labels, cfg.lr);
  }
  // Entries point into the memory, so storing waits until the pairs are consumed.
  stats.stored = store_episodes(memory, batch, cfg.window, step);
  return stats;
}

}  // namespace cdan
