#include "cdan/layers.hpp"

#include <cmath>
#include <numbers>

#include "cdan/errors.hpp"
#include "cdan/rng.hpp"

namespace cdan {

namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

void add_dense_params(ParamTree& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                      bool zero) {
  params.add(prefix + "/W", zero ? Tensor({in, out}) : glorot_uniform(in, out, rng));
  params.add(prefix + "/b", Tensor({out}));
}

void add_lstm_params(ParamTree& params, const std::string& prefix, LstmShape shape, Rng& rng) {
  const std::size_t H = shape.hidden;
  params.add(prefix + "/Wx", glorot_uniform(shape.input, 4 * H, rng));
  params.add(prefix + "/Wh", glorot_uniform(H, 4 * H, rng));
  Tensor b({4 * H});
  for (std::size_t j = H; j < 2 * H; ++j) b[j] = 1.0;  // forget gate
  params.add(prefix + "/b", std::move(b));
}

LstmState lstm_zero_state(Tape& tape, std::size_t batch, std::size_t hidden) {
  return {tape.constant(Tensor({batch, hidden})), tape.constant(Tensor({batch, hidden}))};
}

LstmState lstm_step(Var x, const LstmState& prev, Var wx, Var wh, Var b) {
  const Shape& xs = x.shape();
  const Shape& hs = prev.h.shape();
  if (xs.size() != 2 || hs.size() != 2 || xs[0] != hs[0]) {
    throw ConfigError("lstm_step: input " + shape_string(xs) + " vs state " + shape_string(hs));
  }
  const std::size_t B = xs[0], I = xs[1], H = hs[1];
  if (wx.shape() != Shape{I, 4 * H} || wh.shape() != Shape{H, 4 * H} || b.value().size() != 4 * H ||
      prev.c.shape() != hs) {
    throw ConfigError("lstm_step: parameter shapes do not match input " + std::to_string(I) + " / hidden " +
                      std::to_string(H));
  }

  // Activated gates are cached alongside the outputs: [h' | c' | i f g o].
  Tensor out({B, 6 * H});
  const double* xv = x.value().data();
  const double* hv = prev.h.value().data();
  const double* cv = prev.c.value().data();
  const double* Wx = wx.value().data();
  const double* Wh = wh.value().data();
  const double* bv = b.value().data();
  std::vector<double> z(4 * H);
  for (std::size_t r = 0; r < B; ++r) {
    std::copy(bv, bv + 4 * H, z.begin());
    for (std::size_t k = 0; k < I; ++k) {
      const double a = xv[r * I + k];
      const double* row = Wx + k * 4 * H;
      for (std::size_t j = 0; j < 4 * H; ++j) z[j] += a * row[j];
    }
    for (std::size_t k = 0; k < H; ++k) {
      const double a = hv[r * H + k];
      const double* row = Wh + k * 4 * H;
      for (std::size_t j = 0; j < 4 * H; ++j) z[j] += a * row[j];
    }
    double* o = out.data() + r * 6 * H;
    double* gates = o + 2 * H;
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = sigmoid(z[j]);
      const double fg = sigmoid(z[H + j]);
      const double gg = std::tanh(z[2 * H + j]);
      const double og = sigmoid(z[3 * H + j]);
      const double c_new = fg * cv[r * H + j] + ig * gg;
      o[j] = og * std::tanh(c_new);
      o[H + j] = c_new;
      gates[j] = ig;
      gates[H + j] = fg;
      gates[2 * H + j] = gg;
      gates[3 * H + j] = og;
    }
  }

  Tape& tape = *x.tape();
  Var prev_h = prev.h, prev_c = prev.c;
  Var packed = tape.record(
      std::move(out), {x, prev_h, prev_c, wx, wh, b},
      [x, prev_h, prev_c, wx, wh, b, B, I, H](Tape& t, const Tensor& g, const Tensor& y) {
        // dz: gradient w.r.t. gate pre-activations, [B x 4H].
        std::vector<double> dz(B * 4 * H);
        const Tensor& cprev = t.value(prev_c);
        Tensor* gc = t.requires_grad(prev_c) ? &t.grad_accumulator(prev_c) : nullptr;
        for (std::size_t r = 0; r < B; ++r) {
          const double* o = y.data() + r * 6 * H;
          const double* gates = o + 2 * H;
          const double* gr = g.data() + r * 6 * H;
          double* d = dz.data() + r * 4 * H;
          for (std::size_t j = 0; j < H; ++j) {
            const double ig = gates[j], fg = gates[H + j], gg = gates[2 * H + j], og = gates[3 * H + j];
            const double tc = std::tanh(o[H + j]);
            const double dh = gr[j];
            const double dc = gr[H + j] + dh * og * (1.0 - tc * tc);
            d[j] = dc * gg * ig * (1.0 - ig);
            d[H + j] = dc * cprev[r * H + j] * fg * (1.0 - fg);
            d[2 * H + j] = dc * ig * (1.0 - gg * gg);
            d[3 * H + j] = dh * tc * og * (1.0 - og);
            if (gc) (*gc)[r * H + j] += dc * fg;
          }
        }
        const std::size_t G = 4 * H;
        auto back_input = [&](Var in, Var w, std::size_t n) {
          const double* wv = t.value(w).data();
          if (t.requires_grad(in)) {
            double* gi = t.grad_accumulator(in).data();
            for (std::size_t r = 0; r < B; ++r) {
              for (std::size_t k = 0; k < n; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < G; ++j) acc += dz[r * G + j] * wv[k * G + j];
                gi[r * n + k] += acc;
              }
            }
          }
          if (t.requires_grad(w)) {
            const double* iv = t.value(in).data();
            double* gw = t.grad_accumulator(w).data();
            for (std::size_t r = 0; r < B; ++r) {
              for (std::size_t k = 0; k < n; ++k) {
                const double a = iv[r * n + k];
                for (std::size_t j = 0; j < G; ++j) gw[k * G + j] += a * dz[r * G + j];
              }
            }
          }
        };
        back_input(x, wx, I);
        back_input(prev_h, wh, H);
        if (t.requires_grad(b)) {
          Tensor& gb = t.grad_accumulator(b);
          for (std::size_t r = 0; r < B; ++r) {
            for (std::size_t j = 0; j < G; ++j) gb[j] += dz[r * G + j];
          }
        }
      });
  return {ad::slice_cols(packed, 0, H), ad::slice_cols(packed, H, 2 * H)};
}

Var gaussian_log_prob(Var a, Var mean, Var log_std) {
  if (a.shape() != mean.shape() || mean.shape().size() != 2 || log_std.value().size() != mean.shape()[1]) {
    throw ConfigError("gaussian_log_prob: action " + shape_string(a.shape()) + ", mean " +
                      shape_string(mean.shape()) + ", log_std " + shape_string(log_std.shape()));
  }
  const std::size_t B = mean.shape()[0];
  Var ls = ad::broadcast_rows(log_std, B);
  Var z = ad::mul(ad::sub(a, mean), ad::exp(ad::neg(ls)));
  Var per_dim = ad::add_scalar(ad::sub(ad::scale(ad::square(z), -0.5), ls), -kHalfLog2Pi);
  return ad::row_sum(per_dim);
}

double gaussian_entropy(const Tensor& log_std) {
  double h = 0.0;
  for (double v : log_std.values()) h += 0.5 + kHalfLog2Pi + v;
  return h;
}

Var gaussian_entropy(Var log_std) {
  const double n = static_cast<double>(log_std.value().size());
  return ad::add_scalar(ad::sum(log_std), n * (0.5 + kHalfLog2Pi));
}

}  // namespace cdan
