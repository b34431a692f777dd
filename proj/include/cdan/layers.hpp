#pragma once

#include <string>

#include "cdan/autodiff.hpp"

namespace cdan {

class Rng;

struct LstmState {
  Var h;
  Var c;
};

// Parameter leaves of one LSTM layer: <prefix>/Wx [I x 4H], <prefix>/Wh [H x 4H],
// <prefix>/b [4H]. Gate column blocks are ordered input, forget, cell, output.
struct LstmShape {
  std::size_t input = 0;
  std::size_t hidden = 0;
};

void add_lstm_params(ParamTree& params, const std::string& prefix, LstmShape shape, Rng& rng);
void add_dense_params(ParamTree& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                      bool zero = false);

// One step of the gated recurrent cell:
//   i, f, o = sigmoid(.), g = tanh(.), c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_step(Var x, const LstmState& prev, Var wx, Var wh, Var b);
LstmState lstm_zero_state(Tape& tape, std::size_t batch, std::size_t hidden);

// Sum over action dimensions of the diagonal Gaussian log density. a, mean: [B x A];
// log_std: [A]. Returns [B].
Var gaussian_log_prob(Var a, Var mean, Var log_std);

// Differential entropy of the diagonal Gaussian: sum_d (0.5 + 0.5 ln 2pi + log_std_d).
double gaussian_entropy(const Tensor& log_std);
Var gaussian_entropy(Var log_std);

}  // namespace cdan
