#pragma once

#include <cstdint>

#include "cdan/param_tree.hpp"

namespace cdan {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  ParamTree first_moment;
  ParamTree second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamTree& params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam. The learning rate is per call so one state can serve
// updates issued with different rates. Throws NumericError, leaving params and
// state untouched, if any gradient is non-finite.
void adam_step(ParamTree& params, const ParamTree& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

double global_norm(const ParamTree& tree);
// Rescales grads so their global norm is at most max_norm; returns the norm before.
// A non-positive max_norm leaves grads alone.
double clip_global_norm(ParamTree& grads, double max_norm);

}  // namespace cdan
