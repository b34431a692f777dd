#include "cdan/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cdan/errors.hpp"
#include "cdan/layers.hpp"
#include "cdan/rng.hpp"

namespace cdan {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// y = act(x W + b) for one row, with the accumulation order of ad::dense.
std::vector<double> dense_row(std::span<const double> x, const Tensor& w, const Tensor& b, bool tanh_act) {
  const std::size_t I = w.shape()[0], O = w.shape()[1];
  std::vector<double> y(b.data(), b.data() + O);
  for (std::size_t k = 0; k < I; ++k) {
    const double a = x[k];
    const double* row = w.data() + k * O;
    for (std::size_t c = 0; c < O; ++c) y[c] += a * row[c];
  }
  if (tanh_act) {
    for (auto& v : y) v = std::tanh(v);
  }
  return y;
}

}  // namespace

PolicyNet::PolicyNet(PolicyShape shape, Rng& rng, bool zero_heads) : shape_(shape) {
  if (shape.obs_dim == 0 || shape.action_dim == 0 || shape.hidden == 0) {
    throw ConfigError("PolicyNet: dimensions must be positive");
  }
  add_dense_params(params_, "policy/trunk0", shape.input_dim(), shape.hidden, rng);
  add_dense_params(params_, "policy/trunk1", shape.hidden, shape.hidden, rng);
  add_dense_params(params_, "policy/mean", shape.hidden, shape.action_dim, rng, zero_heads);
  params_.add("policy/log_std", Tensor({shape.action_dim}));
  add_dense_params(params_, "policy/state", shape.hidden, shape.obs_dim, rng, zero_heads);
  add_dense_params(params_, "policy/value", shape.hidden, 1, rng, zero_heads);
}

PolicyNet::PolicyNet(PolicyShape shape, ParamTree params) : shape_(shape), params_(std::move(params)) {
  Rng rng(0);
  const PolicyNet reference(shape, rng);
  if (!params_.same_layout(reference.params_)) {
    throw ConfigError("PolicyNet: parameter layout does not match obs " + std::to_string(shape.obs_dim) +
                      ", context " + std::to_string(shape.context_dim) + ", hidden " + std::to_string(shape.hidden));
  }
}

PolicyNet::Outputs PolicyNet::forward(const ParamBinding& theta, Var inputs) const {
  if (inputs.shape().size() != 2 || inputs.shape()[1] != shape_.input_dim()) {
    throw ConfigError("PolicyNet::forward: expected [B x " + std::to_string(shape_.input_dim()) + "] inputs, got " +
                      shape_string(inputs.shape()));
  }
  const std::size_t B = inputs.shape()[0];
  Var h = ad::dense(inputs, theta["policy/trunk0/W"], theta["policy/trunk0/b"], Activation::tanh);
  h = ad::dense(h, theta["policy/trunk1/W"], theta["policy/trunk1/b"], Activation::tanh);
  Outputs out;
  out.mean = ad::dense(h, theta["policy/mean/W"], theta["policy/mean/b"], Activation::identity);
  out.log_std = theta["policy/log_std"];
  out.next_state = ad::dense(h, theta["policy/state/W"], theta["policy/state/b"], Activation::identity);
  out.value = ad::reshape(ad::dense(h, theta["policy/value/W"], theta["policy/value/b"], Activation::identity), {B});
  return out;
}

PolicyNet::Eval PolicyNet::evaluate(std::span<const double> obs, std::span<const double> context) const {
  if (obs.size() != shape_.obs_dim || context.size() != shape_.context_dim) {
    throw ConfigError("PolicyNet::evaluate: observation/context sizes " + std::to_string(obs.size()) + "/" +
                      std::to_string(context.size()) + " do not match the network");
  }
  std::vector<double> x(obs.begin(), obs.end());
  x.insert(x.end(), context.begin(), context.end());
  auto h = dense_row(x, params_.at("policy/trunk0/W"), params_.at("policy/trunk0/b"), true);
  h = dense_row(h, params_.at("policy/trunk1/W"), params_.at("policy/trunk1/b"), true);
  Eval e;
  e.mean = dense_row(h, params_.at("policy/mean/W"), params_.at("policy/mean/b"), false);
  const Tensor& ls = params_.at("policy/log_std");
  e.log_std.assign(ls.data(), ls.data() + ls.size());
  e.next_state = dense_row(h, params_.at("policy/state/W"), params_.at("policy/state/b"), false);
  e.value = dense_row(h, params_.at("policy/value/W"), params_.at("policy/value/b"), false)[0];
  return e;
}

double gaussian_log_prob(std::span<const double> a, std::span<const double> mean, std::span<const double> log_std) {
  if (a.size() != mean.size() || a.size() != log_std.size()) throw ConfigError("gaussian_log_prob: size mismatch");
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double z = (a[d] - mean[d]) * std::exp(-log_std[d]);
    s += (-0.5 * (z * z) - log_std[d]) + -kHalfLog2Pi;
  }
  return s;
}

ActionSample sample_action(std::span<const double> mean, std::span<const double> log_std, Rng& rng) {
  if (mean.size() != log_std.size()) throw ConfigError("sample_action: size mismatch");
  ActionSample out;
  out.action.resize(mean.size());
  for (std::size_t d = 0; d < mean.size(); ++d) out.action[d] = mean[d] + std::exp(log_std[d]) * rng.normal();
  out.log_prob = gaussian_log_prob(out.action, mean, log_std);
  return out;
}

void RolloutBatch::validate() const {
  const std::size_t n = rewards.size();
  auto check = [n](std::size_t got, std::size_t per_row, const char* what) {
    if (got != n * per_row) throw UsageError(std::string("RolloutBatch: '") + what + "' has wrong length");
  };
  check(observations.size(), obs_dim, "observations");
  check(contexts.size(), context_dim, "contexts");
  check(actions.size(), action_dim, "actions");
  check(log_probs.size(), 1, "log_probs");
  check(values.size(), 1, "values");
  check(next_observations.size(), obs_dim, "next_observations");
  check(terminal.size(), 1, "terminal");
  check(bootstrap.size(), 1, "bootstrap");
  if (!predicted_states.empty()) check(predicted_states.size(), obs_dim, "predicted_states");
  std::size_t pos = 0;
  for (const auto& e : episodes) {
    if (e.begin != pos || e.end <= e.begin) throw UsageError("RolloutBatch: episodes do not partition the steps");
    pos = e.end;
  }
  if (pos != n) throw UsageError("RolloutBatch: episodes do not cover all steps");
}

std::vector<double> gae_advantages(const RolloutBatch& batch, double gamma, double lambda) {
  batch.validate();
  std::vector<double> adv(batch.size(), 0.0);
  for (const auto& e : batch.episodes) {
    double running = 0.0;
    for (std::size_t t = e.end; t-- > e.begin;) {
      double next_value;
      if (t + 1 == e.end) {
        next_value = batch.terminal[t] ? 0.0 : batch.bootstrap[t];
      } else {
        next_value = batch.values[t + 1];
      }
      const double delta = batch.rewards[t] + gamma * next_value - batch.values[t];
      running = delta + gamma * lambda * running;
      adv[t] = running;
    }
  }
  return adv;
}

void normalize(std::vector<double>& values) {
  if (values.empty()) return;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  const double sd = std::sqrt(var);
  for (double& v : values) v = sd > 1e-12 ? (v - mean) / sd : v - mean;
}

void compute_advantages(RolloutBatch& batch, double gamma, double lambda) {
  batch.advantages = gae_advantages(batch, gamma, lambda);
  batch.returns.resize(batch.size());
  for (std::size_t t = 0; t < batch.size(); ++t) batch.returns[t] = batch.advantages[t] + batch.values[t];
  normalize(batch.advantages);
}

Var prediction_l1(Var predicted, Var real) {
  if (predicted.shape() != real.shape()) {
    throw UsageError("prediction_l1: " + shape_string(predicted.shape()) + " vs " + shape_string(real.shape()));
  }
  return ad::sum(ad::abs(ad::sub(predicted, real)));
}

double prediction_l1(std::span<const double> predicted, std::span<const double> real) {
  if (predicted.size() != real.size()) throw UsageError("prediction_l1: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += std::abs(predicted[i] - real[i]);
  return s;
}

void PPOConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("PPOConfig: clip range must be in (0, 1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("PPOConfig: gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("PPOConfig: gae_lambda must be in [0, 1]");
  if (epochs == 0 || minibatch == 0) throw ConfigError("PPOConfig: epochs and minibatch must be positive");
  if (!(lr > 0.0)) throw ConfigError("PPOConfig: learning rate must be positive");
}

std::vector<WindowRef> episode_windows(const RolloutBatch& batch, std::size_t max_length) {
  std::vector<WindowRef> out;
  for (const auto& e : batch.episodes) out.push_back({e.begin, std::min(e.length(), max_length), e.task});
  return out;
}

std::vector<Var> predicted_window_steps(const PolicyNet& policy, const ParamBinding& theta,
                                        const RolloutBatch& batch, const std::vector<WindowRef>& refs) {
  if (refs.empty()) throw UsageError("predicted_window_steps: no windows");
  const std::size_t in = policy.shape().input_dim();
  std::size_t rows = 0, T = 0;
  for (const auto& r : refs) {
    if (r.length == 0 || r.begin + r.length > batch.size()) throw UsageError("predicted_window_steps: bad window");
    rows += r.length;
    T = std::max(T, r.length);
  }
  Tensor x({rows, in});
  std::vector<std::size_t> offset;
  std::size_t row = 0;
  for (const auto& r : refs) {
    offset.push_back(row);
    for (std::size_t t = r.begin; t < r.begin + r.length; ++t, ++row) {
      const auto o = batch.observation(t);
      const auto c = batch.context(t);
      std::copy(o.begin(), o.end(), x.data() + row * in);
      std::copy(c.begin(), c.end(), x.data() + row * in + o.size());
    }
  }
  Tape& tape = *theta.begin()->second.tape();
  const Var predicted = policy.forward(theta, tape.constant(std::move(x))).next_state;
  std::vector<Var> steps;
  steps.reserve(T);
  std::vector<long> gather(refs.size());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < refs.size(); ++b) {
      gather[b] = t < refs[b].length ? static_cast<long>(offset[b] + t) : -1;
    }
    steps.push_back(ad::gather_rows(predicted, gather));
  }
  return steps;
}

LossTerms ppo_loss(const PolicyNet& policy, const ParamBinding& theta, const RolloutBatch& batch,
                   const std::vector<std::size_t>& idx, const PPOConfig& cfg, const DiversityTerm* diversity,
                   const std::vector<WindowRef>& windows) {
  if (idx.empty()) throw UsageError("ppo_loss: empty minibatch");
  if (batch.advantages.size() != batch.size() || batch.returns.size() != batch.size()) {
    throw UsageError("ppo_loss: advantages have not been computed");
  }
  Tape& tape = *theta.begin()->second.tape();
  const std::size_t B = idx.size(), in = policy.shape().input_dim(), A = batch.action_dim, D = batch.obs_dim;
  Tensor x({B, in}), act({B, A}), old_lp({B}), adv({B}), ret({B}), next({B, D});
  for (std::size_t r = 0; r < B; ++r) {
    const std::size_t t = idx[r];
    const auto o = batch.observation(t);
    const auto c = batch.context(t);
    std::copy(o.begin(), o.end(), x.data() + r * in);
    std::copy(c.begin(), c.end(), x.data() + r * in + D);
    std::copy(batch.actions.begin() + static_cast<std::ptrdiff_t>(t * A),
              batch.actions.begin() + static_cast<std::ptrdiff_t>((t + 1) * A), act.data() + r * A);
    std::copy(batch.next_observations.begin() + static_cast<std::ptrdiff_t>(t * D),
              batch.next_observations.begin() + static_cast<std::ptrdiff_t>((t + 1) * D), next.data() + r * D);
    old_lp[r] = batch.log_probs[t];
    adv[r] = batch.advantages[t];
    ret[r] = batch.returns[t];
  }
  const auto out = policy.forward(theta, tape.constant(std::move(x)));
  const Var logp = gaussian_log_prob(tape.constant(std::move(act)), out.mean, out.log_std);
  const Var old = tape.constant(std::move(old_lp));
  const Var ratio = ad::exp(ad::sub(logp, old));
  const Var a = tape.constant(std::move(adv));
  const Var surr1 = ad::mul(ratio, a);
  const Var surr2 = ad::mul(ad::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a);

  LossTerms terms;
  terms.surrogate = ad::mean(ad::minimum(surr1, surr2));
  terms.value_loss = ad::mean(ad::square(ad::sub(out.value, tape.constant(std::move(ret)))));
  terms.entropy = gaussian_entropy(out.log_std);
  Var total = ad::add(ad::neg(terms.surrogate), ad::scale(terms.value_loss, cfg.value_coef));
  total = ad::sub(total, ad::scale(terms.entropy, cfg.entropy_coef));
  if (cfg.l1_coef != 0.0) {
    terms.l1 = ad::scale(prediction_l1(out.next_state, tape.constant(std::move(next))), 1.0 / static_cast<double>(B));
    total = ad::add(total, ad::scale(terms.l1, cfg.l1_coef));
  }
  if (diversity && diversity->discriminator && !windows.empty() && cfg.diversity_coef != 0.0) {
    const ParamBinding phi = tape.bind(diversity->discriminator->params(), false);
    const auto steps = predicted_window_steps(policy, theta, batch, windows);
    std::vector<std::size_t> lengths, tasks;
    for (const auto& w : windows) {
      lengths.push_back(w.length);
      tasks.push_back(w.task);
    }
    terms.diversity = diversity_loss(diversity->discriminator->logits(phi, steps, lengths), tasks);
    total = ad::add(total, ad::scale(terms.diversity, cfg.diversity_coef));
  }
  terms.total = total;

  const Tensor& rv = ratio.value();
  const Tensor& lv = logp.value();
  const Tensor& ov = old.value();
  std::size_t clipped = 0;
  double kl = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    if (std::abs(rv[r] - 1.0) > cfg.clip) ++clipped;
    kl += ov[r] - lv[r];
  }
  terms.clip_fraction = static_cast<double>(clipped) / static_cast<double>(B);
  terms.approx_kl = kl / static_cast<double>(B);
  return terms;
}

PPOStats ppo_update(PolicyNet& policy, AdamState& adam, const RolloutBatch& batch, const PPOConfig& cfg, Rng& rng,
                    const DiversityTerm* diversity) {
  cfg.validate();
  batch.validate();
  const std::size_t N = batch.size();
  if (N == 0) throw UsageError("ppo_update: empty rollout");
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  const std::size_t M = (N + cfg.minibatch - 1) / cfg.minibatch;
  const std::vector<WindowRef> no_windows;
  const std::vector<WindowRef>& all_windows = diversity ? diversity->windows : no_windows;

  PPOStats stats;
  std::size_t diversity_terms = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = N - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t lo = m * cfg.minibatch, hi = std::min(N, lo + cfg.minibatch);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<WindowRef> windows;
      for (std::size_t w = m; w < all_windows.size(); w += M) windows.push_back(all_windows[w]);

      Tape tape;
      const ParamBinding theta = tape.bind(policy.params(), true);
      const LossTerms terms = ppo_loss(policy, theta, batch, idx, cfg, diversity, windows);
      const double total = terms.total.value().item();
      if (!std::isfinite(total)) {
        ++stats.skipped_minibatches;
        continue;
      }
      tape.backward(terms.total);
      ParamTree grads = tape.gradients(theta);
      bool finite = true;
      for (const auto& [name, g] : grads) finite = finite && g.all_finite();
      if (!finite) {
        ++stats.skipped_minibatches;
        continue;
      }
      adam_step(policy.params(), grads, adam, cfg.lr);
      ++stats.minibatches;
      stats.policy_loss -= terms.surrogate.value().item();
      stats.value_loss += terms.value_loss.value().item();
      stats.entropy += terms.entropy.value().item();
      if (terms.l1.valid()) stats.l1_loss += terms.l1.value().item();
      if (terms.diversity.valid()) {
        stats.diversity_loss += terms.diversity.value().item();
        ++diversity_terms;
      }
      stats.clip_fraction += terms.clip_fraction;
      stats.approx_kl += terms.approx_kl;
    }
  }
  if (stats.minibatches > 0) {
    const double n = static_cast<double>(stats.minibatches);
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.l1_loss /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
  }
  if (diversity_terms > 0) stats.diversity_loss /= static_cast<double>(diversity_terms);
  return stats;
}

}  // namespace cdan
