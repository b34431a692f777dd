#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdan/tensor.hpp"

namespace cdan {

// Named parameter leaves in insertion order. The order is part of the
// contract: Adam updates, checkpoints and gradient checks all iterate it.
class ParamTree {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Same names and shapes, all zeros.
  ParamTree zeros_like() const;
  bool same_layout(const ParamTree& other) const;

  friend bool operator==(const ParamTree& a, const ParamTree& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t find(std::string_view name) const;
  std::vector<Entry> entries_;
};

// Glorot-style uniform fill in +-sqrt(6 / (fan_in + fan_out)).
class Rng;
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace cdan
