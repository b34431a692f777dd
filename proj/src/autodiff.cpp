#include "cdan/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cdan/errors.hpp"

namespace cdan {

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }

Var ParamBinding::operator[](std::string_view name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return v;
  }
  throw ConfigError("ParamBinding: no leaf '" + std::string(name) + "'");
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw UsageError("Var does not belong to this tape");
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
  bool needs = false;
  for (Var p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backward{}, needs});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backward fn) {
  bool needs = false;
  for (Var p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backward{}, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_accumulator(Var v) {
  Node& n = nodes_[v.id_];
  if (n.grad.empty() && n.value.size() != 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got " + shape_string(nodes_[loss.id_].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_accumulator(loss)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad, n.value);
  }
}

ParamBinding Tape::bind(const ParamTree& params, bool trainable) {
  ParamBinding b;
  for (const auto& [name, t] : params) b.add(name, trainable ? variable(t) : constant(t));
  return b;
}

ParamTree Tape::gradients(const ParamBinding& binding) const {
  ParamTree out;
  for (const auto& [name, v] : binding) {
    const Node& n = nodes_[v.id_];
    out.add(name, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

namespace ad {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void same_shape(Var a, Var b, const char* op) {
  require(a.tape() == b.tape(), std::string(op) + ": operands live on different tapes");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

void require_matrix(Var a, const char* op) {
  require(a.shape().size() == 2, std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

// Elementwise op whose derivative is expressed through (x, y).
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape()->record(std::move(y), {a}, [a, df](Tape& t, const Tensor& g, const Tensor& y) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_accumulator(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

// out += a(B x I) * b(I x O)
void gemm_nn(const double* a, const double* b, double* out, std::size_t B, std::size_t I, std::size_t O) {
  for (std::size_t r = 0; r < B; ++r) {
    double* orow = out + r * O;
    const double* arow = a + r * I;
    for (std::size_t k = 0; k < I; ++k) {
      const double av = arow[k];
      const double* brow = b + k * O;
      for (std::size_t c = 0; c < O; ++c) orow[c] += av * brow[c];
    }
  }
}

// out(B x I) += g(B x O) * b(I x O)^T
void gemm_nt(const double* g, const double* b, double* out, std::size_t B, std::size_t I, std::size_t O) {
  for (std::size_t r = 0; r < B; ++r) {
    const double* grow = g + r * O;
    double* orow = out + r * I;
    for (std::size_t k = 0; k < I; ++k) {
      const double* brow = b + k * O;
      double acc = 0.0;
      for (std::size_t c = 0; c < O; ++c) acc += grow[c] * brow[c];
      orow[k] += acc;
    }
  }
}

// out(I x O) += a(B x I)^T * g(B x O)
void gemm_tn(const double* a, const double* g, double* out, std::size_t B, std::size_t I, std::size_t O) {
  for (std::size_t r = 0; r < B; ++r) {
    const double* arow = a + r * I;
    const double* grow = g + r * O;
    for (std::size_t k = 0; k < I; ++k) {
      const double av = arow[k];
      double* orow = out + k * O;
      for (std::size_t c = 0; c < O; ++c) orow[c] += av * grow[c];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t B = a.shape()[0], I = a.shape()[1], O = b.shape()[1];
  require(b.shape()[0] == I, "matmul: inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor y({B, O});
  gemm_nn(a.value().data(), b.value().data(), y.data(), B, I, O);
  return a.tape()->record(std::move(y), {a, b}, [a, b, B, I, O](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(a)) gemm_nt(g.data(), t.value(b).data(), t.grad_accumulator(a).data(), B, I, O);
    if (t.requires_grad(b)) gemm_tn(t.value(a).data(), g.data(), t.grad_accumulator(b).data(), B, I, O);
  });
}

Var dense(Var x, Var w, Var b, Activation act) {
  require_matrix(x, "dense");
  require_matrix(w, "dense");
  const std::size_t B = x.shape()[0], I = x.shape()[1], O = w.shape()[1];
  require(w.shape()[0] == I, "dense: input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  require(b.value().size() == O, "dense: bias " + shape_string(b.shape()) + " vs " + std::to_string(O) + " outputs");
  Tensor y({B, O});
  const double* bias = b.value().data();
  for (std::size_t r = 0; r < B; ++r) std::copy(bias, bias + O, y.data() + r * O);
  gemm_nn(x.value().data(), w.value().data(), y.data(), B, I, O);
  if (act == Activation::tanh) {
    for (auto& v : y.values()) v = std::tanh(v);
  } else if (act == Activation::relu) {
    for (auto& v : y.values()) v = std::max(v, 0.0);
  }
  return x.tape()->record(std::move(y), {x, w, b}, [x, w, b, act, B, I, O](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor pre = g;
    if (act == Activation::tanh) {
      for (std::size_t i = 0; i < pre.size(); ++i) pre[i] *= 1.0 - y[i] * y[i];
    } else if (act == Activation::relu) {
      for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = y[i] > 0.0 ? pre[i] : 0.0;
    }
    if (t.requires_grad(x)) gemm_nt(pre.data(), t.value(w).data(), t.grad_accumulator(x).data(), B, I, O);
    if (t.requires_grad(w)) gemm_tn(t.value(x).data(), pre.data(), t.grad_accumulator(w).data(), B, I, O);
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_accumulator(b);
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t c = 0; c < O; ++c) gb[c] += pre[r * O + c];
      }
    }
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(a)) t.grad_accumulator(a) += g;
    if (t.requires_grad(b)) t.grad_accumulator(b) += g;
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(a)) t.grad_accumulator(a) += g;
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_accumulator(a);
      const Tensor& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_accumulator(b);
      const Tensor& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double k) {
  return unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return std::max(x, 0.0); }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  same_shape(a, b, "minimum");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(y[i], bv[i]);
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const bool ra = t.requires_grad(a), rb = t.requires_grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] <= bv[i]) {
        if (ra) t.grad_accumulator(a)[i] += g[i];
      } else if (rb) {
        t.grad_accumulator(b)[i] += g[i];
      }
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(Var a) {
  require_matrix(a, "row_sum");
  const std::size_t B = a.shape()[0], K = a.shape()[1];
  Tensor y({B});
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < K; ++c) s += x[r * K + c];
    y[r] = s;
  }
  return a.tape()->record(std::move(y), {a}, [a, B, K](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < K; ++c) ga[r * K + c] += g[r];
    }
  });
}

Var reshape(Var a, Shape shape) {
  require(shape_size(shape) == a.value().size(),
          "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor y(std::move(shape), a.value().storage());
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var broadcast_rows(Var v, std::size_t rows) {
  const std::size_t K = v.value().size();
  Tensor y({rows, K});
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.value().data(), v.value().data() + K, y.data() + r * K);
  return v.tape()->record(std::move(y), {v}, [v, rows, K](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gv = t.grad_accumulator(v);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < K; ++c) gv[c] += g[r * K + c];
    }
  });
}

Var scale_rows(Var a, const std::vector<double>& weights) {
  require_matrix(a, "scale_rows");
  const std::size_t B = a.shape()[0], K = a.shape()[1];
  require(weights.size() == B, "scale_rows: " + std::to_string(weights.size()) + " weights for " +
                                   std::to_string(B) + " rows");
  Tensor y = a.value();
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < K; ++c) y[r * K + c] *= weights[r];
  }
  return a.tape()->record(std::move(y), {a}, [a, weights, K](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    for (std::size_t r = 0; r < weights.size(); ++r) {
      for (std::size_t c = 0; c < K; ++c) ga[r * K + c] += g[r * K + c] * weights[r];
    }
  });
}

Var pick(Var a, const std::vector<std::size_t>& cols) {
  require_matrix(a, "pick");
  const std::size_t B = a.shape()[0], K = a.shape()[1];
  require(cols.size() == B, "pick: index count does not match rows");
  Tensor y({B});
  for (std::size_t r = 0; r < B; ++r) {
    require(cols[r] < K, "pick: column out of range");
    y[r] = a.value()[r * K + cols[r]];
  }
  return a.tape()->record(std::move(y), {a}, [a, cols, K](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    for (std::size_t r = 0; r < cols.size(); ++r) ga[r * K + cols[r]] += g[r];
  });
}

Var gather_rows(Var a, const std::vector<long>& rows) {
  require_matrix(a, "gather_rows");
  const std::size_t N = a.shape()[0], D = a.shape()[1];
  Tensor y({rows.size(), D});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0) continue;
    require(static_cast<std::size_t>(rows[r]) < N, "gather_rows: row out of range");
    const double* src = a.value().data() + static_cast<std::size_t>(rows[r]) * D;
    std::copy(src, src + D, y.data() + r * D);
  }
  return a.tape()->record(std::move(y), {a}, [a, rows, D](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0) continue;
      double* dst = ga.data() + static_cast<std::size_t>(rows[r]) * D;
      for (std::size_t c = 0; c < D; ++c) dst[c] += g[r * D + c];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const std::size_t B = a.shape()[0], K = a.shape()[1];
  require(begin < end && end <= K, "slice_cols: bad range");
  const std::size_t W = end - begin;
  Tensor y({B, W});
  for (std::size_t r = 0; r < B; ++r) {
    const double* src = a.value().data() + r * K + begin;
    std::copy(src, src + W, y.data() + r * W);
  }
  return a.tape()->record(std::move(y), {a}, [a, begin, W, K](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& ga = t.grad_accumulator(a);
    const std::size_t B = g.size() / W;
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < W; ++c) ga[r * K + begin + c] += g[r * W + c];
    }
  });
}

Var concat_cols(Var a, Var b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const std::size_t B = a.shape()[0], Ka = a.shape()[1], Kb = b.shape()[1];
  require(b.shape()[0] == B, "concat_cols: row count mismatch");
  Tensor y({B, Ka + Kb});
  for (std::size_t r = 0; r < B; ++r) {
    std::copy(a.value().data() + r * Ka, a.value().data() + (r + 1) * Ka, y.data() + r * (Ka + Kb));
    std::copy(b.value().data() + r * Kb, b.value().data() + (r + 1) * Kb, y.data() + r * (Ka + Kb) + Ka);
  }
  return a.tape()->record(std::move(y), {a, b}, [a, b, B, Ka, Kb](Tape& t, const Tensor& g, const Tensor&) {
    const std::size_t K = Ka + Kb;
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_accumulator(a);
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t c = 0; c < Ka; ++c) ga[r * Ka + c] += g[r * K + c];
      }
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_accumulator(b);
      for (std::size_t r = 0; r < B; ++r) {
        for (std::size_t c = 0; c < Kb; ++c) gb[r * Kb + c] += g[r * K + Ka + c];
      }
    }
  });
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var softmax(Var logits) {
  require_matrix(logits, "softmax");
  const std::size_t B = logits.shape()[0], K = logits.shape()[1];
  Tensor y = logits.value();
  for (std::size_t r = 0; r < B; ++r) {
    double* row = y.data() + r * K;
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t c = 0; c < K; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < K; ++c) row[c] /= z;
  }
  return logits.tape()->record(std::move(y), {logits}, [logits, B, K](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& gl = t.grad_accumulator(logits);
    for (std::size_t r = 0; r < B; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < K; ++c) dot += g[r * K + c] * y[r * K + c];
      for (std::size_t c = 0; c < K; ++c) gl[r * K + c] += y[r * K + c] * (g[r * K + c] - dot);
    }
  });
}

Var log_softmax(Var logits) {
  require_matrix(logits, "log_softmax");
  const std::size_t B = logits.shape()[0], K = logits.shape()[1];
  Tensor y = logits.value();
  for (std::size_t r = 0; r < B; ++r) {
    double* row = y.data() + r * K;
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t c = 0; c < K; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < K; ++c) row[c] -= lse;
  }
  return logits.tape()->record(std::move(y), {logits}, [logits, B, K](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& gl = t.grad_accumulator(logits);
    for (std::size_t r = 0; r < B; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < K; ++c) gs += g[r * K + c];
      for (std::size_t c = 0; c < K; ++c) gl[r * K + c] += g[r * K + c] - std::exp(y[r * K + c]) * gs;
    }
  });
}

}  // namespace ad
}  // namespace cdan
