#include "cdan/discriminator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "cdan/errors.hpp"
#include "cdan/layers.hpp"
#include "cdan/rng.hpp"

namespace cdan {

namespace {
std::atomic<std::size_t> g_clamp_incidents{0};
const double kLogFloor = std::log(kProbFloor);
}  // namespace

std::size_t probability_clamp_incidents() { return g_clamp_incidents.load(); }

TrajectoryWindow make_window(std::span<const double> states, std::size_t dim) {
  if (dim == 0 || states.empty() || states.size() % dim != 0) {
    throw UsageError("make_window: need a non-empty sequence of " + std::to_string(dim) + "-dimensional states");
  }
  TrajectoryWindow w;
  w.dim = dim;
  w.length = std::min(states.size() / dim, TrajectoryWindow::kLength);
  w.states.assign(TrajectoryWindow::kLength * dim, 0.0);
  std::copy(states.begin(), states.begin() + static_cast<std::ptrdiff_t>(w.length * dim), w.states.begin());
  return w;
}

DiscriminatorNet::DiscriminatorNet(DiscriminatorShape shape, Rng& rng, bool zero_output) : shape_(shape) {
  if (shape.input_dim == 0 || shape.hidden == 0 || shape.tasks == 0) {
    throw ConfigError("DiscriminatorNet: dimensions must be positive");
  }
  add_lstm_params(params_, "disc/lstm", {shape.input_dim, shape.hidden}, rng);
  add_dense_params(params_, "disc/out", shape.hidden, shape.tasks, rng, zero_output);
}

DiscriminatorNet::DiscriminatorNet(DiscriminatorShape shape, ParamTree params)
    : shape_(shape), params_(std::move(params)) {
  Rng rng(0);
  const DiscriminatorNet reference(shape, rng);
  if (!params_.same_layout(reference.params_)) {
    throw ConfigError("DiscriminatorNet: parameter layout does not match input " + std::to_string(shape.input_dim) +
                      ", hidden " + std::to_string(shape.hidden) + ", tasks " + std::to_string(shape.tasks));
  }
}

Var DiscriminatorNet::logits(const ParamBinding& phi, const std::vector<Var>& steps,
                             const std::vector<std::size_t>& lengths) const {
  if (steps.empty() || lengths.empty()) throw UsageError("discriminator: empty batch");
  const std::size_t B = lengths.size();
  const std::size_t T = *std::max_element(lengths.begin(), lengths.end());
  if (T == 0 || *std::min_element(lengths.begin(), lengths.end()) == 0) {
    throw UsageError("discriminator: every window needs at least one unmasked step");
  }
  if (steps.size() < T) throw UsageError("discriminator: fewer step inputs than the longest window");
  Tape& tape = *steps[0].tape();
  const Var wx = phi["disc/lstm/Wx"], wh = phi["disc/lstm/Wh"], b = phi["disc/lstm/b"];
  const Var wo = phi["disc/out/W"], bo = phi["disc/out/b"];
  LstmState state = lstm_zero_state(tape, B, shape_.hidden);
  Var pooled;
  std::vector<double> weights(B);
  for (std::size_t t = 0; t < T; ++t) {
    state = lstm_step(steps[t], state, wx, wh, b);
    Var step_logits = ad::dense(state.h, wo, bo, Activation::identity);
    for (std::size_t r = 0; r < B; ++r) weights[r] = t < lengths[r] ? 1.0 / static_cast<double>(lengths[r]) : 0.0;
    Var contrib = ad::scale_rows(step_logits, weights);
    pooled = t == 0 ? contrib : ad::add(pooled, contrib);
  }
  return pooled;
}

std::vector<Var> DiscriminatorNet::window_steps(Tape& tape, const std::vector<const TrajectoryWindow*>& windows) {
  if (windows.empty()) throw UsageError("discriminator: empty batch");
  const std::size_t B = windows.size(), D = windows[0]->dim;
  std::size_t T = 0;
  for (const auto* w : windows) {
    if (w->dim != D) throw ConfigError("discriminator: windows with different state dimensions");
    T = std::max(T, w->length);
  }
  std::vector<Var> steps;
  steps.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    Tensor x({B, D});
    for (std::size_t r = 0; r < B; ++r) {
      const auto s = windows[r]->state(t);
      std::copy(s.begin(), s.end(), x.data() + r * D);
    }
    steps.push_back(tape.constant(std::move(x)));
  }
  return steps;
}

std::vector<std::size_t> DiscriminatorNet::window_lengths(const std::vector<const TrajectoryWindow*>& windows) {
  std::vector<std::size_t> lengths;
  lengths.reserve(windows.size());
  for (const auto* w : windows) lengths.push_back(w->length);
  return lengths;
}

std::vector<std::vector<double>> DiscriminatorNet::discriminate(
    const std::vector<const TrajectoryWindow*>& windows) const {
  Tape tape;
  const ParamBinding phi = tape.bind(params_, false);
  Var probs = ad::softmax(logits(phi, window_steps(tape, windows), window_lengths(windows)));
  const Tensor& p = probs.value();
  std::vector<std::vector<double>> out(windows.size());
  for (std::size_t r = 0; r < windows.size(); ++r) {
    out[r].assign(p.data() + r * shape_.tasks, p.data() + (r + 1) * shape_.tasks);
  }
  return out;
}

std::vector<double> DiscriminatorNet::discriminate(const TrajectoryWindow& window) const {
  return discriminate(std::vector<const TrajectoryWindow*>{&window})[0];
}

Var clamped_log_probs(Var logits) {
  Var lp = ad::log_softmax(logits);
  for (double v : lp.value().values()) {
    if (v < kLogFloor) g_clamp_incidents.fetch_add(1);
  }
  return ad::clamp(lp, kLogFloor, 0.0);
}

Var diversity_loss(Var logits, const std::vector<std::size_t>& tasks) {
  return ad::neg(ad::mean(ad::pick(clamped_log_probs(logits), tasks)));
}

double diversity_loss(std::span<const double> probs, std::size_t task) {
  if (task >= probs.size()) throw UsageError("diversity_loss: task index out of range");
  double p = probs[task];
  if (p < kProbFloor) {
    g_clamp_incidents.fetch_add(1);
    p = kProbFloor;
  }
  return -std::log(p);
}

DiscriminatorUpdateStats discriminator_update(DiscriminatorNet& disc, AdamState& adam,
                                              const std::vector<const TrajectoryWindow*>& windows,
                                              const std::vector<std::size_t>& tasks, double lr,
                                              double max_grad_norm) {
  if (windows.empty() || windows.size() != tasks.size()) {
    throw UsageError("discriminator_update: need one task label per window and a non-empty batch");
  }
  Tape tape;
  const ParamBinding phi = tape.bind(disc.params(), true);
  Var logits = disc.logits(phi, DiscriminatorNet::window_steps(tape, windows), DiscriminatorNet::window_lengths(windows));
  Var loss = diversity_loss(logits, tasks);
  DiscriminatorUpdateStats stats;
  stats.loss = loss.value().item();
  const Tensor& lv = logits.value();
  const std::size_t K = disc.shape().tasks;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < tasks.size(); ++r) {
    const double* row = lv.data() + r * K;
    if (static_cast<std::size_t>(std::max_element(row, row + K) - row) == tasks[r]) ++correct;
  }
  stats.accuracy = static_cast<double>(correct) / static_cast<double>(tasks.size());
  tape.backward(loss);
  ParamTree grads = tape.gradients(phi);
  clip_global_norm(grads, max_grad_norm);
  adam_step(disc.params(), grads, adam, lr);
  return stats;
}

double classification_accuracy(const DiscriminatorNet& disc, const std::vector<const TrajectoryWindow*>& windows,
                               const std::vector<std::size_t>& tasks) {
  if (windows.empty()) return 0.0;
  const auto probs = disc.discriminate(windows);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    const auto& p = probs[r];
    if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == tasks[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(windows.size());
}

WindowBuffer::WindowBuffer(std::size_t per_task) : per_task_(per_task) {
  if (per_task_ == 0) throw ConfigError("window buffer needs a positive per-task capacity");
}

void WindowBuffer::add(std::size_t task, TrajectoryWindow window) {
  auto& ring = rings_[task];
  ring.push_back(std::move(window));
  if (ring.size() > per_task_) ring.pop_front();
}

std::size_t WindowBuffer::size() const {
  std::size_t n = 0;
  for (const auto& [task, ring] : rings_) n += ring.size();
  return n;
}

std::size_t WindowBuffer::size(std::size_t task) const {
  const auto it = rings_.find(task);
  return it == rings_.end() ? 0 : it->second.size();
}

void WindowBuffer::sample(std::size_t count, Rng& rng, std::vector<const TrajectoryWindow*>& windows,
                          std::vector<std::size_t>& tasks) const {
  if (rings_.empty()) throw UsageError("WindowBuffer::sample: buffer is empty");
  for (std::size_t k = 0; k < count; ++k) {
    auto it = std::next(rings_.begin(), static_cast<std::ptrdiff_t>(rng.index(rings_.size())));
    windows.push_back(&it->second[rng.index(it->second.size())]);
    tasks.push_back(it->first);
  }
}

void WindowBuffer::save(Container& out, const std::string& prefix) const {
  out.put_u64(prefix + "per_task", per_task_);
  out.put_u64(prefix + "count", size());
  std::size_t k = 0;
  for (const auto& [task, ring] : rings_) {
    for (const auto& w : ring) {
      const std::string p = prefix + "w" + std::to_string(k++) + "/";
      out.put_u64(p + "meta", {task, w.length, w.dim});
      out.put(p + "states", Tensor({w.length, w.dim}, std::vector<double>(w.states.begin(),
                                                                         w.states.begin() +
                                                                             static_cast<std::ptrdiff_t>(w.length * w.dim))));
    }
  }
}

WindowBuffer WindowBuffer::load(const Container& in, const std::string& prefix) {
  WindowBuffer b(in.u64_scalar(prefix + "per_task"));
  const std::size_t count = in.u64_scalar(prefix + "count");
  for (std::size_t k = 0; k < count; ++k) {
    const std::string p = prefix + "w" + std::to_string(k) + "/";
    const auto& meta = in.u64(p + "meta");
    if (meta.size() != 3) throw LoadError("window buffer: malformed entry " + p);
    TrajectoryWindow w = make_window(in.tensor(p + "states").values(), meta[2]);
    if (w.length != meta[1]) throw LoadError("window buffer: window length mismatch in " + p);
    b.add(meta[0], std::move(w));
  }
  return b;
}

bool operator==(const WindowBuffer& a, const WindowBuffer& b) {
  if (a.per_task_ != b.per_task_ || a.rings_.size() != b.rings_.size()) return false;
  for (auto ia = a.rings_.begin(), ib = b.rings_.begin(); ia != a.rings_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.size() != ib->second.size()) return false;
    for (std::size_t i = 0; i < ia->second.size(); ++i) {
      const auto& x = ia->second[i];
      const auto& y = ib->second[i];
      if (x.length != y.length || x.dim != y.dim || x.states != y.states) return false;
    }
  }
  return true;
}

}  // namespace cdan
