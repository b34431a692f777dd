#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cdan/adam.hpp"
#include "cdan/autodiff.hpp"
#include "cdan/container.hpp"
#include "cdan/errors.hpp"
#include "cdan/layers.hpp"
#include "cdan/rng.hpp"
#include "test_support.hpp"

using namespace cdan;
using cdan::testing::gradient_check;
using cdan::testing::random_tensor;

namespace {

Tensor dense_value(const Tensor& x, const Tensor& w, const Tensor& b, Activation act) {
  Tape tape;
  return ad::dense(tape.constant(x), tape.constant(w), tape.constant(b), act).value();
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

TEST(Dense, ZeroCase) {
  const Tensor y = dense_value(Tensor::matrix({{0, 0}}), Tensor({2, 2}), Tensor({2}), Activation::identity);
  EXPECT_EQ(y, Tensor::matrix({{0, 0}}));
}

TEST(Dense, IdentityWeight) {
  const Tensor y = dense_value(Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({1, 1}),
                               Activation::identity);
  EXPECT_EQ(y, Tensor::matrix({{2, 3}}));
}

TEST(Dense, TanhScalar) {
  const Tensor y = dense_value(Tensor::matrix({{0.5}}), Tensor::matrix({{2}}), Tensor::vector({0}), Activation::tanh);
  EXPECT_NEAR(y[0], std::tanh(1.0), 1e-15);
  EXPECT_NEAR(y[0], 0.76159, 1e-5);
}

TEST(Dense, ShapeMismatchIsConfigError) {
  Tape tape;
  EXPECT_THROW(ad::dense(tape.constant(Tensor({1, 3})), tape.constant(Tensor({2, 2})), tape.constant(Tensor({2})),
                         Activation::identity),
               ConfigError);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  for (Activation act : {Activation::identity, Activation::tanh, Activation::relu}) {
    ParamTree p;
    p.add("x", random_tensor({3, 4}, rng));
    p.add("W", random_tensor({4, 5}, rng));
    p.add("b", random_tensor({5}, rng));
    const double err = gradient_check(p, [act](Tape&, const ParamBinding& v) {
      return ad::sum(ad::square(ad::dense(v["x"], v["W"], v["b"], act)));
    });
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Lstm, ZeroParamsGiveFiniteOutput) {
  ParamTree p;
  p.add("Wx", Tensor({3, 8}));
  p.add("Wh", Tensor({2, 8}));
  p.add("b", Tensor({8}));
  Tape tape;
  const auto v = tape.bind(p);
  Rng rng(1);
  const auto s = lstm_step(tape.constant(random_tensor({4, 3}, rng)), lstm_zero_state(tape, 4, 2), v["Wx"], v["Wh"],
                           v["b"]);
  EXPECT_EQ(s.h.shape(), (Shape{4, 2}));
  EXPECT_TRUE(s.h.value().all_finite());
  // Zero pre-activations: i = f = o = 0.5, g = 0, so c' = 0.5 c = 0 and h' = 0.
  for (double h : s.h.value().values()) EXPECT_EQ(h, 0.0);
}

TEST(Lstm, TwoStepUnrollMatchesFiniteDifferences) {
  Rng rng(7);
  ParamTree p;
  add_lstm_params(p, "lstm", {3, 4}, rng);
  p.add("x0", random_tensor({2, 3}, rng));
  p.add("x1", random_tensor({2, 3}, rng));
  p.add("h0", random_tensor({2, 4}, rng));
  p.add("c0", random_tensor({2, 4}, rng));
  const double err = gradient_check(p, [](Tape&, const ParamBinding& v) {
    LstmState s{v["h0"], v["c0"]};
    s = lstm_step(v["x0"], s, v["lstm/Wx"], v["lstm/Wh"], v["lstm/b"]);
    s = lstm_step(v["x1"], s, v["lstm/Wx"], v["lstm/Wh"], v["lstm/b"]);
    return ad::add(ad::sum(ad::square(s.h)), ad::sum(s.c));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Lstm, StepwiseCallsMatchBatchedUnroll) {
  Rng rng(11);
  ParamTree p;
  add_lstm_params(p, "lstm", {3, 5}, rng);
  const Tensor x0 = random_tensor({2, 3}, rng), x1 = random_tensor({2, 3}, rng);
  Tape tape;
  const auto v = tape.bind(p, false);
  LstmState batched = lstm_zero_state(tape, 2, 5);
  batched = lstm_step(tape.constant(x0), batched, v["lstm/Wx"], v["lstm/Wh"], v["lstm/b"]);
  batched = lstm_step(tape.constant(x1), batched, v["lstm/Wx"], v["lstm/Wh"], v["lstm/b"]);
  for (std::size_t r = 0; r < 2; ++r) {
    LstmState s = lstm_zero_state(tape, 1, 5);
    s = lstm_step(tape.constant(Tensor({1, 3}, {x0(r, 0), x0(r, 1), x0(r, 2)})), s, v["lstm/Wx"], v["lstm/Wh"],
                  v["lstm/b"]);
    s = lstm_step(tape.constant(Tensor({1, 3}, {x1(r, 0), x1(r, 1), x1(r, 2)})), s, v["lstm/Wx"], v["lstm/Wh"],
                  v["lstm/b"]);
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(s.h.value()(0, c), batched.h.value()(r, c));
  }
}

TEST(Lstm, ForgetGateBiasIsOne) {
  Rng rng(0);
  ParamTree p;
  add_lstm_params(p, "lstm", {3, 4}, rng);
  const Tensor& b = p.at("lstm/b");
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(b[j], (j >= 4 && j < 8) ? 1.0 : 0.0);
}

TEST(Softmax, Symmetry) {
  Tape tape;
  const Tensor y = ad::softmax(tape.constant(Tensor::matrix({{0, 0, 0}}))).value();
  for (double v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tape tape;
  const Tensor y = ad::softmax(tape.constant(Tensor::matrix({{1000, 0}}))).value();
  EXPECT_TRUE(y.all_finite());
  EXPECT_EQ(y[0], 1.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, ClosedForm) {
  Tape tape;
  const Tensor y = ad::softmax(tape.constant(Tensor::matrix({{std::log(2.0), std::log(1.0)}}))).value();
  EXPECT_NEAR(y[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneInsideOpenInterval) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    const Tensor y = ad::softmax(tape.constant(random_tensor({4, 7}, rng, -30.0, 30.0))).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GT(y(r, c), 0.0);
        EXPECT_LT(y(r, c), 1.0);
        s += y(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(GaussianLogProb, ModeOfStandardNormal) {
  Tape tape;
  const Tensor mean = Tensor::matrix({{0.3, -0.2, 1.0}});
  const Var lp = gaussian_log_prob(tape.constant(mean), tape.constant(mean), tape.constant(Tensor({3})));
  EXPECT_NEAR(lp.value()[0], -1.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(GaussianLogProb, OneSigmaAway) {
  Tape tape;
  const double sigma = 0.7;
  const Var lp = gaussian_log_prob(tape.constant(Tensor::matrix({{0.2 + sigma}})),
                                   tape.constant(Tensor::matrix({{0.2}})),
                                   tape.constant(Tensor::vector({std::log(sigma)})));
  // Density of N(mu, sigma^2) at mu + sigma: -0.5 - ln sigma - 0.5 ln 2pi.
  EXPECT_NEAR(lp.value()[0], -0.5 - std::log(sigma) - kHalfLog2Pi, 1e-14);
  Tape t2;
  const Var unit = gaussian_log_prob(t2.constant(Tensor::matrix({{1.0}})), t2.constant(Tensor::matrix({{0.0}})),
                                     t2.constant(Tensor({1})));
  EXPECT_NEAR(unit.value()[0], -0.5 - kHalfLog2Pi, 1e-15);
}

TEST(GaussianLogProb, DoublingSigmaAtModeCostsLnTwoPerDim) {
  Tape tape;
  const Tensor mean = Tensor::matrix({{0.1, 0.4}});
  const Var a = gaussian_log_prob(tape.constant(mean), tape.constant(mean), tape.constant(Tensor::vector({0.3, -0.1})));
  const Var b = gaussian_log_prob(tape.constant(mean), tape.constant(mean),
                                  tape.constant(Tensor::vector({0.3 + std::log(2.0), -0.1 + std::log(2.0)})));
  EXPECT_NEAR(a.value()[0] - b.value()[0], 2.0 * std::log(2.0), 1e-13);
}

TEST(Backward, SumGivesOnes) {
  ParamTree p;
  p.add("W", Tensor::matrix({{1, 2}, {3, 4}}));
  Tape tape;
  const auto v = tape.bind(p);
  tape.backward(ad::sum(v["W"]));
  const ParamTree g = tape.gradients(v);
  for (double x : g.at("W").values()) EXPECT_EQ(x, 1.0);
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
  Rng rng(2024);
  ParamTree p;
  p.add("x", random_tensor({5, 4}, rng));
  add_dense_params(p, "l0", 4, 6, rng);
  add_dense_params(p, "l1", 6, 6, rng);
  add_dense_params(p, "l2", 6, 3, rng);
  const double err = gradient_check(p, [](Tape&, const ParamBinding& v) {
    Var h = ad::dense(v["x"], v["l0/W"], v["l0/b"], Activation::tanh);
    h = ad::dense(h, v["l1/W"], v["l1/b"], Activation::tanh);
    h = ad::dense(h, v["l2/W"], v["l2/b"], Activation::identity);
    return ad::mean(ad::square(h));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, DetachedLossGivesZeroGradient) {
  ParamTree p;
  p.add("W", Tensor::matrix({{1, 2}}));
  p.add("unused", Tensor::vector({5}));
  Tape tape;
  const auto v = tape.bind(p);
  tape.backward(ad::sum(ad::square(ad::detach(v["W"]))));
  const ParamTree g = tape.gradients(v);
  for (const auto& [name, t] : g) {
    for (double x : t.values()) EXPECT_EQ(x, 0.0) << name;
  }
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape tape;
  const Var w = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(ad::square(w)), UsageError);
}

TEST(Backward, EveryElementwiseOpMatchesFiniteDifferences) {
  Rng rng(17);
  ParamTree p;
  p.add("a", random_tensor({3, 4}, rng, 0.2, 1.5));
  p.add("b", random_tensor({3, 4}, rng, -1.5, -0.2));
  p.add("v", random_tensor({4}, rng));
  const double err = gradient_check(p, [](Tape&, const ParamBinding& v) {
    const Var a = v["a"], b = v["b"];
    Var t = ad::add(ad::mul(a, b), ad::sub(ad::tanh(a), ad::sigmoid(b)));
    t = ad::add(t, ad::scale(ad::exp(ad::scale(b, 0.5)), 0.3));
    t = ad::add(t, ad::log(a));
    t = ad::add(t, ad::abs(b));
    t = ad::add(t, ad::relu(a));
    t = ad::add(t, ad::clamp(ad::scale(a, 2.0), 0.0, 10.0));
    t = ad::add(t, ad::minimum(a, ad::neg(b)));
    t = ad::add(t, ad::add_scalar(ad::square(b), 1.0));
    t = ad::add(t, ad::broadcast_rows(v["v"], 3));
    return ad::mean(ad::square(t));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, EveryStructuralOpMatchesFiniteDifferences) {
  Rng rng(19);
  ParamTree p;
  p.add("a", random_tensor({4, 5}, rng));
  p.add("b", random_tensor({4, 3}, rng));
  p.add("m", random_tensor({5, 3}, rng));
  const double err = gradient_check(p, [](Tape&, const ParamBinding& v) {
    const Var a = v["a"];
    const Var mm = ad::matmul(a, v["m"]);
    const Var cat = ad::concat_cols(mm, v["b"]);
    const Var sl = ad::slice_cols(cat, 1, 5);
    const Var g = ad::gather_rows(sl, {2, -1, 0, 3, 1});
    const Var r = ad::reshape(g, {20});
    const Var ls = ad::log_softmax(ad::scale_rows(sl, {0.5, 1.0, 2.0, 0.25}));
    const Var pk = ad::pick(ad::softmax(cat), {0, 3, 5, 2});
    return ad::add(ad::add(ad::sum(ad::square(r)), ad::mean(ad::row_sum(ls))), ad::sum(pk));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, GaussianLogProbMatchesFiniteDifferences) {
  Rng rng(23);
  ParamTree p;
  p.add("a", random_tensor({4, 2}, rng));
  p.add("mean", random_tensor({4, 2}, rng));
  p.add("log_std", random_tensor({2}, rng, -0.5, 0.5));
  const double err = gradient_check(p, [](Tape&, const ParamBinding& v) {
    return ad::add(ad::sum(gaussian_log_prob(v["a"], v["mean"], v["log_std"])), gaussian_entropy(v["log_std"]));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, NoNonFiniteValuesWithinMagnitudeBounds) {
  Rng rng(29);
  Tape tape;
  const Var x = tape.variable(random_tensor({3, 6}, rng, -1e3, 1e3));
  Var y = ad::add(ad::tanh(x), ad::sigmoid(x));
  y = ad::add(y, ad::log_softmax(x));
  y = ad::add(y, ad::softmax(x));
  const Var loss = ad::sum(ad::square(y));
  tape.backward(loss);
  EXPECT_TRUE(loss.value().all_finite());
  EXPECT_TRUE(x.grad().all_finite());
}

TEST(Backward, ReplayIsBitIdentical) {
  auto run = [] {
    Rng rng(31);
    ParamTree p;
    add_dense_params(p, "l", 4, 3, rng);
    const Tensor x = random_tensor({6, 4}, rng);
    Tape tape;
    const auto v = tape.bind(p);
    const Var loss = ad::mean(ad::square(ad::dense(tape.constant(x), v["l/W"], v["l/b"], Activation::tanh)));
    tape.backward(loss);
    return std::make_pair(loss.value(), tape.gradients(v));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  Rng rng(1);
  ParamTree p;
  add_dense_params(p, "l", 3, 2, rng);
  const ParamTree before = p;
  AdamState s = AdamState::for_params(p);
  adam_step(p, p.zeros_like(), s, 1e-3);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamTree p;
  p.add("w", Tensor::vector({0.5, -0.25, 2.0}));
  ParamTree g;
  g.add("w", Tensor::vector({3.0, -0.01, 1e-3}));
  AdamState s = AdamState::for_params(p);
  const double lr = 1e-3;
  adam_step(p, g, s, lr);
  // m_hat = g, v_hat = g^2, so delta = -lr g / (|g| + eps).
  const double expect[3] = {0.5 - lr, -0.25 + lr, 2.0 - lr};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(p.at("w")[i], expect[i], lr * 1e-4);
  }
}

TEST(Adam, IdenticalCallsAreBitIdentical) {
  auto run = [] {
    Rng rng(9);
    ParamTree p;
    add_dense_params(p, "l", 3, 2, rng);
    ParamTree g = p.zeros_like();
    for (auto& [name, t] : g) {
      for (auto& v : t.values()) v = rng.normal();
    }
    AdamState s = AdamState::for_params(p);
    for (int k = 0; k < 5; ++k) adam_step(p, g, s, 1e-3);
    return std::make_pair(p, s);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Adam, NanGradientAbortsWithoutChanges) {
  ParamTree p;
  p.add("w", Tensor::vector({1.0, 2.0}));
  ParamTree g;
  g.add("w", Tensor::vector({0.1, std::nan("")}));
  AdamState s = AdamState::for_params(p);
  const ParamTree before = p;
  const AdamState state_before = s;
  EXPECT_THROW(adam_step(p, g, s, 1e-3), NumericError);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s, state_before);
}

TEST(Container, ResaveIsByteIdentical) {
  Rng rng(4);
  ParamTree p;
  add_dense_params(p, "net/l0", 3, 4, rng);
  add_lstm_params(p, "net/lstm", {2, 3}, rng);
  AdamState s = AdamState::for_params(p);
  adam_step(p, p, s, 1e-3);
  Container c;
  c.put_tree("theta/", p);
  c.put_adam("adam/", s);
  c.put_u64("rng", rng.state());
  c.put_u64("step", 42);
  c.put_f64("lr", 1e-3);
  const auto bytes = c.to_bytes();
  const Container back = Container::from_bytes(bytes);
  EXPECT_EQ(back.to_bytes(), bytes);
  EXPECT_EQ(back.tree("theta/", p), p);
  EXPECT_EQ(back.adam("adam/", p), s);
  EXPECT_EQ(back.u64_scalar("step"), 42u);

  const auto dir = cdan::testing::temp_dir("container");
  c.save(dir / "a.ckpt");
  Container::load(dir / "a.ckpt").save(dir / "b.ckpt");
  EXPECT_EQ(Container::load(dir / "b.ckpt").to_bytes(), bytes);
}

TEST(Container, RejectsCorruptInput) {
  Container c;
  c.put_f64("x", 1.0);
  auto bytes = c.to_bytes();
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(Container::from_bytes(truncated), LoadError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(Container::from_bytes(bad_magic), LoadError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(Container::from_bytes(trailing), LoadError);
}

TEST(Rng, StateRoundTripReproducesStream) {
  Rng a(77);
  for (int i = 0; i < 10; ++i) a.normal();
  Rng b(0);
  b.set_state(a.state());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Adam, GlobalNormClipping) {
  ParamTree g;
  g.add("a", Tensor::vector({3.0, 0.0}));
  g.add("b", Tensor::vector({4.0}));
  ParamTree same = g;
  EXPECT_EQ(clip_global_norm(same, 10.0), 5.0);
  EXPECT_EQ(same, g);
  EXPECT_EQ(clip_global_norm(same, 0.0), 5.0);
  EXPECT_EQ(same, g);
  EXPECT_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_NEAR(g.at("a")[0], 0.6, 1e-15);
  EXPECT_NEAR(g.at("b")[0], 0.8, 1e-15);
}
