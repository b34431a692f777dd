#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "cdan/autodiff.hpp"
#include "cdan/env.hpp"
#include "cdan/param_tree.hpp"
#include "cdan/rng.hpp"

namespace cdan::testing {

// Builds a scalar loss on `tape` from the bound leaves.
using LossBuilder = std::function<Var(Tape&, const ParamBinding&)>;

// Relative error with a small floor so that near-zero entries compare absolutely.
inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Max relative error between reverse-mode gradients and central differences
// over every entry of every leaf.
inline double gradient_check(ParamTree& params, const LossBuilder& build, double h = 1e-5) {
  Tape tape;
  const ParamBinding binding = tape.bind(params, true);
  const Var loss = build(tape, binding);
  tape.backward(loss);
  const ParamTree grads = tape.gradients(binding);

  auto eval = [&] {
    Tape t;
    const ParamBinding b = t.bind(params, false);
    return build(t, b).value().item();
  };
  double worst = 0.0;
  for (auto& [name, leaf] : params) {
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double keep = leaf[i];
      leaf[i] = keep + h;
      const double up = eval();
      leaf[i] = keep - h;
      const double down = eval();
      leaf[i] = keep;
      worst = std::max(worst, rel_error(g[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::filesystem::path source_dir() { return CDAN_SOURCE_DIR; }
inline std::filesystem::path suite_path() { return source_dir() / "data" / "suite.manifest"; }

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cdan_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// One-sample Kolmogorov-Smirnov statistic against Uniform(lo, hi).
inline double ks_uniform(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = (xs[i] - lo) / (hi - lo);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

// Asymptotic KS p-value for statistic d with n samples.
inline double ks_p_value(double d, std::size_t n) {
  const double rn = std::sqrt(static_cast<double>(n));
  const double x = (rn + 0.12 + 0.11 / rn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace cdan::testing
