#include "cdan/adam.hpp"

#include <cmath>
#include <sstream>

#include "cdan/errors.hpp"

namespace cdan {

AdamState AdamState::for_params(const ParamTree& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamTree& params, const ParamTree& grads, AdamState& state, double lr, const AdamConfig& config) {
  if (!params.same_layout(grads) || !params.same_layout(state.first_moment) ||
      !params.same_layout(state.second_moment)) {
    throw ConfigError("adam_step: parameter, gradient and moment layouts differ");
  }
  for (const auto& [name, g] : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        std::ostringstream os;
        os << "adam_step: non-finite gradient " << g[i] << " in '" << name << "' at index " << i
           << "; step " << state.step + 1 << " aborted";
        throw NumericError(os.str());
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  auto p = params.begin();
  auto g = grads.begin();
  auto m = state.first_moment.begin();
  auto v = state.second_moment.begin();
  for (; p != params.end(); ++p, ++g, ++m, ++v) {
    Tensor& pt = p->second;
    const Tensor& gt = g->second;
    Tensor& mt = m->second;
    Tensor& vt = v->second;
    for (std::size_t i = 0; i < pt.size(); ++i) {
      mt[i] = config.beta1 * mt[i] + (1.0 - config.beta1) * gt[i];
      vt[i] = config.beta2 * vt[i] + (1.0 - config.beta2) * gt[i] * gt[i];
      const double mhat = mt[i] / bc1;
      const double vhat = vt[i] / bc2;
      pt[i] -= lr * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

double global_norm(const ParamTree& tree) {
  double s = 0.0;
  for (const auto& [name, t] : tree) {
    for (double v : t.values()) s += v * v;
  }
  return std::sqrt(s);
}

double clip_global_norm(ParamTree& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (auto& [name, t] : grads) {
      for (double& v : t.values()) v *= scale;
    }
  }
  return norm;
}

}  // namespace cdan
