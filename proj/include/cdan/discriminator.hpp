#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <span>
#include <vector>

#include "cdan/adam.hpp"
#include "cdan/autodiff.hpp"
#include "cdan/container.hpp"

namespace cdan {

class Rng;

// Fixed-length discriminator input: the first kLength states of a trajectory,
// zero-padded. Steps at or beyond `length` are masked.
struct TrajectoryWindow {
  static constexpr std::size_t kLength = 100;

  std::size_t dim = 0;
  std::size_t length = 0;
  std::vector<double> states;  // kLength x dim, row-major

  bool masked(std::size_t t) const { return t >= length; }
  std::span<const double> state(std::size_t t) const { return {states.data() + t * dim, dim}; }
};

// Truncates to the first kLength states or pads with masked zeros. `states`
// holds count x dim values. Throws UsageError for an empty sequence.
TrajectoryWindow make_window(std::span<const double> states, std::size_t dim);

struct DiscriminatorShape {
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::size_t tasks = 0;
};

// LSTM over the window, a per-step dense layer to task logits, masked average
// pooling over time, softmax. Leaves: disc/lstm/{Wx,Wh,b}, disc/out/{W,b}.
class DiscriminatorNet {
 public:
  DiscriminatorNet() = default;
  DiscriminatorNet(DiscriminatorShape shape, Rng& rng, bool zero_output = true);
  DiscriminatorNet(DiscriminatorShape shape, ParamTree params);

  const DiscriminatorShape& shape() const { return shape_; }
  ParamTree& params() { return params_; }
  const ParamTree& params() const { return params_; }

  // steps[t] is [B x input_dim]; lengths[b] counts the unmasked prefix of row b.
  // Returns pooled logits [B x tasks]. Steps past the longest row are not unrolled.
  Var logits(const ParamBinding& phi, const std::vector<Var>& steps, const std::vector<std::size_t>& lengths) const;

  // Constant per-step inputs for a batch of windows.
  static std::vector<Var> window_steps(Tape& tape, const std::vector<const TrajectoryWindow*>& windows);
  static std::vector<std::size_t> window_lengths(const std::vector<const TrajectoryWindow*>& windows);

  // Probabilities for each window, no gradient.
  std::vector<std::vector<double>> discriminate(const std::vector<const TrajectoryWindow*>& windows) const;
  std::vector<double> discriminate(const TrajectoryWindow& window) const;

 private:
  DiscriminatorShape shape_;
  ParamTree params_;
};

// Probability floor for log terms; clamping events are counted.
inline constexpr double kProbFloor = 1e-12;
std::size_t probability_clamp_incidents();

// Row-wise log(max(p, kProbFloor)) for p = softmax(logits).
Var clamped_log_probs(Var logits);

// Mean over rows of -log p[row, task[row]] computed from logits.
Var diversity_loss(Var logits, const std::vector<std::size_t>& tasks);
// -log max(probs[task], kProbFloor) for one probability vector.
double diversity_loss(std::span<const double> probs, std::size_t task);

struct DiscriminatorUpdateStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// One Adam step on the mean diversity loss over the batch; only phi changes.
DiscriminatorUpdateStats discriminator_update(DiscriminatorNet& disc, AdamState& adam,
                                              const std::vector<const TrajectoryWindow*>& windows,
                                              const std::vector<std::size_t>& tasks, double lr,
                                              double max_grad_norm = 0.0);

double classification_accuracy(const DiscriminatorNet& disc, const std::vector<const TrajectoryWindow*>& windows,
                               const std::vector<std::size_t>& tasks);

// Recent discriminator inputs with one FIFO ring per task, so that each update
// sees a task-balanced minibatch rather than the few episodes of one batch.
class WindowBuffer {
 public:
  explicit WindowBuffer(std::size_t per_task = 32);
  void add(std::size_t task, TrajectoryWindow window);
  std::size_t size() const;
  std::size_t size(std::size_t task) const;
  std::size_t task_count() const { return rings_.size(); }
  std::size_t per_task() const { return per_task_; }
  // `count` draws: a task uniformly among the non-empty rings, then a window
  // uniformly within it. Appends to `windows` and `tasks`.
  void sample(std::size_t count, Rng& rng, std::vector<const TrajectoryWindow*>& windows,
              std::vector<std::size_t>& tasks) const;
  void save(Container& out, const std::string& prefix) const;
  static WindowBuffer load(const Container& in, const std::string& prefix);
  friend bool operator==(const WindowBuffer& a, const WindowBuffer& b);

 private:
  std::size_t per_task_;
  std::map<std::size_t, std::deque<TrajectoryWindow>> rings_;
};

}  // namespace cdan
