#include <gtest/gtest.h>

#include <cmath>

#include "cdan/discriminator.hpp"
#include "cdan/errors.hpp"
#include "cdan/policy.hpp"
#include "cdan/rng.hpp"
#include "batch_support.hpp"
#include "test_support.hpp"

using namespace cdan;
using cdan::testing::gradient_check;
using namespace cdan::testing;

namespace {

ParamTree loss_gradients(const PolicyNet& policy, const RolloutBatch& b, const std::vector<std::size_t>& idx,
                         const PPOConfig& cfg, const DiversityTerm* div = nullptr,
                         const std::vector<WindowRef>& windows = {}) {
  Tape tape;
  const auto theta = tape.bind(policy.params());
  const LossTerms terms = ppo_loss(policy, theta, b, idx, cfg, div, windows);
  tape.backward(terms.total);
  return tape.gradients(theta);
}

double norm_of(const ParamTree& g, const std::string& prefix) {
  double s = 0.0;
  for (const auto& [name, t] : g) {
    if (name.rfind(prefix, 0) != 0) continue;
    for (double v : t.values()) s += v * v;
  }
  return std::sqrt(s);
}

PPOConfig surrogate_only() {
  PPOConfig cfg;
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  cfg.l1_coef = 0.0;
  cfg.diversity_coef = 0.0;
  return cfg;
}

}  // namespace

TEST(PolicyForward, ZeroHeadsGiveZeroOutputs) {
  Rng rng(1);
  const PolicyNet p(small_shape(), rng, true);
  for (int k = 0; k < 5; ++k) {
    const auto obs = cdan::testing::random_tensor({kObs}, rng);
    const auto ctx = cdan::testing::random_tensor({kCtx}, rng);
    const auto e = p.evaluate(obs.values(), ctx.values());
    for (double v : e.mean) EXPECT_EQ(v, 0.0);
    for (double v : e.next_state) EXPECT_EQ(v, 0.0);
    for (double v : e.log_std) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(e.value, 0.0);
  }
}

TEST(PolicyForward, DeterministicAndMatchesTape) {
  Rng rng(2);
  const PolicyNet p(small_shape(), rng);
  const Tensor x = cdan::testing::random_tensor({1, kObs + kCtx}, rng);
  const std::span<const double> obs(x.data(), kObs), ctx(x.data() + kObs, kCtx);
  const auto a = p.evaluate(obs, ctx), b = p.evaluate(obs, ctx);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.value, b.value);
  Tape tape;
  const auto out = p.forward(tape.bind(p.params(), false), tape.constant(x));
  for (std::size_t d = 0; d < kAct; ++d) EXPECT_EQ(out.mean.value()[d], a.mean[d]);
  for (std::size_t d = 0; d < kObs; ++d) EXPECT_EQ(out.next_state.value()[d], a.next_state[d]);
  EXPECT_EQ(out.value.value()[0], a.value);
  EXPECT_THROW(p.evaluate(std::span<const double>(x.data(), kObs - 1), ctx), ConfigError);
}

TEST(PolicyForward, ValueGradientMatchesFiniteDifferences) {
  Rng rng(3);
  const PolicyNet p(small_shape(), rng);
  ParamTree params = p.params();
  const Tensor x = cdan::testing::random_tensor({4, kObs + kCtx}, rng);
  const PolicyNet* net = &p;
  const double err = gradient_check(params, [&](Tape& tape, const ParamBinding& theta) {
    const auto out = net->forward(theta, tape.constant(x));
    return ad::add(ad::sum(out.value), ad::sum(ad::square(out.next_state)));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(SampleAction, TinyStdReturnsMean) {
  Rng rng(4);
  const std::vector<double> mean{0.3, -0.7}, log_std{-10.0, -10.0};
  for (int k = 0; k < 100; ++k) {
    const auto s = sample_action(mean, log_std, rng);
    EXPECT_NEAR(s.action[0], 0.3, 1e-3);
    EXPECT_NEAR(s.action[1], -0.7, 1e-3);
  }
}

TEST(SampleAction, EmpiricalMeanWithinCltBound) {
  Rng rng(5);
  const std::vector<double> mean{0.5, -1.0}, log_std{0.3, -0.5};
  const int n = 10000;
  double sum[2] = {0, 0};
  for (int k = 0; k < n; ++k) {
    const auto s = sample_action(mean, log_std, rng);
    EXPECT_DOUBLE_EQ(s.log_prob, gaussian_log_prob(s.action, mean, log_std));
    sum[0] += s.action[0];
    sum[1] += s.action[1];
  }
  for (int d = 0; d < 2; ++d) {
    EXPECT_LT(std::abs(sum[d] / n - mean[d]), 4.0 * std::exp(log_std[d]) / std::sqrt(n));
  }
}

TEST(Gae, GammaZeroIsOneStep) {
  Rng rng(6);
  const RolloutBatch b = synthetic_batch({4, 3, 5}, rng);
  const auto adv = gae_advantages(b, 0.0, 0.95);
  for (std::size_t t = 0; t < b.size(); ++t) EXPECT_NEAR(adv[t], b.rewards[t] - b.values[t], 1e-15);
}

TEST(Gae, LambdaOneZeroValueIsRewardToGo) {
  Rng rng(7);
  RolloutBatch b = synthetic_batch({4, 6}, rng);
  std::fill(b.values.begin(), b.values.end(), 0.0);
  std::fill(b.bootstrap.begin(), b.bootstrap.end(), 0.0);
  const double g = 0.9;
  const auto adv = gae_advantages(b, g, 1.0);
  for (const auto& e : b.episodes) {
    for (std::size_t t = e.begin; t < e.end; ++t) {
      double ret = 0.0, disc = 1.0;
      for (std::size_t k = t; k < e.end; ++k, disc *= g) ret += disc * b.rewards[k];
      EXPECT_NEAR(adv[t], ret, 1e-12);
    }
  }
}

TEST(Gae, MatchesBruteForceSumOfDeltas) {
  Rng rng(8);
  const RolloutBatch b = synthetic_batch({5, 5}, rng);
  const double g = 0.99, l = 0.95;
  const auto adv = gae_advantages(b, g, l);
  for (const auto& e : b.episodes) {
    auto delta = [&](std::size_t k) {
      double next;
      if (k + 1 < e.end) {
        next = b.values[k + 1];
      } else {
        next = b.terminal[k] ? 0.0 : b.bootstrap[k];
      }
      return b.rewards[k] + g * next - b.values[k];
    };
    for (std::size_t t = e.begin; t < e.end; ++t) {
      double brute = 0.0;
      for (std::size_t k = t; k < e.end; ++k) brute += std::pow(g * l, static_cast<double>(k - t)) * delta(k);
      EXPECT_NEAR(adv[t], brute, 1e-12);
    }
  }
  // The cut episode bootstraps from V(s_n), the terminal one does not.
  EXPECT_EQ(b.terminal[4], 1);
  EXPECT_EQ(b.bootstrap[9], 0.7);
}

TEST(Gae, NormalizedAdvantagesAndReturns) {
  Rng rng(9);
  RolloutBatch b = synthetic_batch({7, 9, 11}, rng);
  const auto raw = gae_advantages(b, 0.99, 0.95);
  compute_advantages(b, 0.99, 0.95);
  double mean = 0.0, var = 0.0;
  for (double a : b.advantages) mean += a;
  mean /= static_cast<double>(b.size());
  for (double a : b.advantages) var += (a - mean) * (a - mean);
  EXPECT_LT(std::abs(mean), 1e-9);
  EXPECT_NEAR(std::sqrt(var / static_cast<double>(b.size())), 1.0, 1e-6);
  for (std::size_t t = 0; t < b.size(); ++t) EXPECT_DOUBLE_EQ(b.returns[t], raw[t] + b.values[t]);
}

TEST(RolloutBatch, ValidateRejectsBrokenBatches) {
  Rng rng(10);
  RolloutBatch b = synthetic_batch({3, 3}, rng);
  EXPECT_NO_THROW(b.validate());
  RolloutBatch short_rewards = b;
  short_rewards.log_probs.pop_back();
  EXPECT_THROW(short_rewards.validate(), UsageError);
  RolloutBatch gap = b;
  gap.episodes[1].begin = 4;
  EXPECT_THROW(gap.validate(), UsageError);
}

TEST(Ppo, ZeroAdvantagesGiveZeroActionHeadGradient) {
  Rng rng(11);
  const PolicyNet p(small_shape(), rng);
  RolloutBatch b = synthetic_batch({6, 6}, rng);
  compute_advantages(b, 0.99, 0.95);
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  PPOConfig cfg = surrogate_only();
  cfg.value_coef = 0.5;
  const auto g = loss_gradients(p, b, {0, 1, 2, 3, 4, 5, 6, 7}, cfg);
  EXPECT_EQ(norm_of(g, "policy/mean"), 0.0);
  EXPECT_EQ(norm_of(g, "policy/log_std"), 0.0);
  EXPECT_GT(norm_of(g, "policy/value"), 0.0);
}

TEST(Ppo, ClippingAgainstAdvantageZeroesGradient) {
  Rng rng(12);
  const PolicyNet p(small_shape(), rng);
  RolloutBatch b = synthetic_batch({4}, rng);
  compute_advantages(b, 0.99, 0.95);
  refresh_log_probs(p, b);
  const PPOConfig cfg = surrogate_only();
  const double fresh = b.log_probs[0];

  // ratio = e^0.5 > 1.2 with A > 0: clipped, no push further out.
  b.advantages[0] = 1.0;
  b.log_probs[0] = fresh - 0.5;
  EXPECT_EQ(global_norm(loss_gradients(p, b, {0}, cfg)), 0.0);
  // ratio = e^-0.5 < 0.8 with A < 0: clipped.
  b.advantages[0] = -1.0;
  b.log_probs[0] = fresh + 0.5;
  EXPECT_EQ(global_norm(loss_gradients(p, b, {0}, cfg)), 0.0);
  // Same ratio but A > 0: unclipped side of the min, gradient flows.
  b.advantages[0] = 1.0;
  EXPECT_GT(global_norm(loss_gradients(p, b, {0}, cfg)), 0.0);
  // Inside the trust region.
  b.log_probs[0] = fresh;
  EXPECT_GT(global_norm(loss_gradients(p, b, {0}, cfg)), 0.0);
}

TEST(Ppo, BanditMeanMovesTowardRewardedAction) {
  Rng rng(13);
  PolicyNet p(small_shape(), rng, true);
  AdamState adam = AdamState::for_params(p.params());
  PPOConfig cfg = surrogate_only();
  cfg.epochs = 1;
  cfg.minibatch = 64;
  const std::vector<double> obs(kObs, 0.2), ctx{1, 0, 0};
  double first = 0.0;
  for (int it = 0; it < 100; ++it) {
    const auto e = p.evaluate(obs, ctx);
    if (it == 0) first = e.mean[0];
    RolloutBatch b = synthetic_batch({64}, rng);
    for (std::size_t t = 0; t < b.size(); ++t) {
      std::copy(obs.begin(), obs.end(), b.observations.begin() + static_cast<std::ptrdiff_t>(t * kObs));
      std::copy(ctx.begin(), ctx.end(), b.contexts.begin() + static_cast<std::ptrdiff_t>(t * kCtx));
      b.actions[t * kAct] = 1.0;
      b.actions[t * kAct + 1] = 0.0;
    }
    b.advantages.assign(b.size(), 1.0);
    b.returns.assign(b.size(), 0.0);
    refresh_log_probs(p, b);
    ppo_update(p, adam, b, cfg, rng);
  }
  const double last = p.evaluate(obs, ctx).mean[0];
  EXPECT_EQ(first, 0.0);
  EXPECT_GT(last, 0.5);
  EXPECT_LT(std::abs(last - 1.0), std::abs(first - 1.0));
}

TEST(Ppo, UpdateIsBitReproducible) {
  auto run = [] {
    Rng rng(14);
    PolicyNet p(small_shape(), rng);
    RolloutBatch b = synthetic_batch({20, 30, 14}, rng);
    compute_advantages(b, 0.99, 0.95);
    refresh_log_probs(p, b);
    AdamState adam = AdamState::for_params(p.params());
    PPOConfig cfg;
    cfg.diversity_coef = 0.0;
    const PPOStats s = ppo_update(p, adam, b, cfg, rng);
    return std::make_tuple(p.params(), adam, s.policy_loss, s.value_loss, rng.next_u64());
  };
  EXPECT_EQ(run(), run());
}

TEST(Ppo, NanRatioSkipsMinibatch) {
  Rng rng(15);
  PolicyNet p(small_shape(), rng);
  RolloutBatch b = synthetic_batch({10}, rng);
  compute_advantages(b, 0.99, 0.95);
  std::fill(b.log_probs.begin(), b.log_probs.end(), std::nan(""));
  AdamState adam = AdamState::for_params(p.params());
  const ParamTree before = p.params();
  PPOConfig cfg;
  cfg.epochs = 1;
  const PPOStats s = ppo_update(p, adam, b, cfg, rng);
  EXPECT_EQ(s.skipped_minibatches, 1u);
  EXPECT_EQ(s.minibatches, 0u);
  EXPECT_EQ(p.params(), before);
}

TEST(Ppo, ConfigValidation) {
  PPOConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.clip = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.gamma = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(PredictionL1, ClosedForms) {
  const std::vector<double> s{0.0, 0.0}, s_hat{1.0, 2.0};
  EXPECT_EQ(prediction_l1(s_hat, s), 3.0);
  EXPECT_EQ(prediction_l1(s, s), 0.0);
  EXPECT_THROW(prediction_l1(std::vector<double>{1.0}, s), UsageError);
  Tape tape;
  EXPECT_THROW(prediction_l1(tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 2}))), UsageError);
  const Var v = prediction_l1(tape.constant(Tensor::matrix({{1.0}, {2.0}})), tape.constant(Tensor({2, 1})));
  EXPECT_EQ(v.value().item(), 3.0);
}

TEST(PredictionL1, GradientIsSignAwayFromZero) {
  Rng rng(16);
  ParamTree p;
  p.add("s_hat", cdan::testing::random_tensor({3, 4}, rng));
  const Tensor real = cdan::testing::random_tensor({3, 4}, rng);
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (std::abs(p.at("s_hat")[i] - real[i]) < 1e-3) p.at("s_hat")[i] += 0.01;
  }
  EXPECT_LT(gradient_check(p, [&](Tape& t, const ParamBinding& v) { return prediction_l1(v["s_hat"], t.constant(real)); }),
            1e-6);
  Tape tape;
  const auto v = tape.bind(p);
  tape.backward(prediction_l1(v["s_hat"], tape.constant(real)));
  const Tensor& g = v["s_hat"].grad();
  for (std::size_t i = 0; i < real.size(); ++i) {
    EXPECT_EQ(g[i], p.at("s_hat")[i] > real[i] ? 1.0 : -1.0);
  }
  EXPECT_GE(prediction_l1(p.at("s_hat").values(), real.values()), 0.0);
}

TEST(Ppo, DiversityGradientReachesPolicy) {
  Rng rng(17);
  const PolicyNet p(small_shape(), rng);
  const DiscriminatorNet d({kObs, 8, kCtx}, rng, false);
  RolloutBatch b = synthetic_batch({12, 9, 15}, rng);
  compute_advantages(b, 0.99, 0.95);
  PPOConfig cfg = surrogate_only();
  cfg.diversity_coef = 1.0;
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  DiversityTerm div{&d, episode_windows(b)};
  const auto g = loss_gradients(p, b, {0, 1}, cfg, &div, div.windows);
  EXPECT_GT(norm_of(g, "policy/state"), 0.0);
  EXPECT_GT(norm_of(g, "policy/trunk0"), 0.0);
  EXPECT_EQ(norm_of(g, "policy/mean"), 0.0);
}

TEST(Ppo, DiversityGradientMatchesFiniteDifferences) {
  Rng rng(18);
  const PolicyNet p(small_shape(4), rng);
  const DiscriminatorNet d({kObs, 4, kCtx}, rng, false);
  RolloutBatch b = synthetic_batch({4, 3}, rng);
  compute_advantages(b, 0.99, 0.95);
  PPOConfig cfg = surrogate_only();
  cfg.diversity_coef = 1.0;
  DiversityTerm div{&d, episode_windows(b)};
  ParamTree params = p.params();
  const double err = gradient_check(params, [&](Tape&, const ParamBinding& theta) {
    return ppo_loss(p, theta, b, {0, 1, 2}, cfg, &div, div.windows).total;
  });
  EXPECT_LT(err, 1e-4);
}
