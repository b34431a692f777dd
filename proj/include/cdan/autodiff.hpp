#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdan/param_tree.hpp"
#include "cdan/tensor.hpp"

namespace cdan {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class ParamBinding {
 public:
  void add(std::string name, Var v) { vars_.emplace_back(std::move(name), v); }
  Var operator[](std::string_view name) const;
  auto begin() const { return vars_.begin(); }
  auto end() const { return vars_.end(); }
  std::size_t size() const { return vars_.size(); }

 private:
  std::vector<std::pair<std::string, Var>> vars_;
};

// Records operations in creation order, which is a topological order; backward
// walks it in reverse and visits every node once.
class Tape {
 public:
  // Receives the gradient w.r.t. this node and this node's own value.
  using Backward = std::function<void(Tape&, const Tensor& grad_out, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward fn);
  Var record(Tensor value, const std::vector<Var>& parents, Backward fn);

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id_].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  Tensor& grad_accumulator(Var v);

  void backward(Var loss);
  std::size_t node_count() const { return nodes_.size(); }

  // Every leaf becomes a variable (trainable) or a constant.
  ParamBinding bind(const ParamTree& params, bool trainable = true);
  // Gradients for each bound leaf; zeros where the loss did not reach it.
  ParamTree gradients(const ParamBinding& binding) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };
  void check_owned(Var v) const;

  std::deque<Node> nodes_;
};

enum class Activation { identity, tanh, relu };

namespace ad {

Var matmul(Var a, Var b);
// act(x W + b) with x [B x I], W [I x O], b [O].
Var dense(Var x, Var w, Var b, Activation act);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var neg(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var reshape(Var a, Shape shape);
Var broadcast_rows(Var v, std::size_t rows);
Var scale_rows(Var a, const std::vector<double>& weights);
Var pick(Var a, const std::vector<std::size_t>& cols);
// Row gather; index -1 yields a zero row.
Var gather_rows(Var a, const std::vector<long>& rows);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(Var a, Var b);
Var detach(Var a);

Var softmax(Var logits);
Var log_softmax(Var logits);

}  // namespace ad

}  // namespace cdan
