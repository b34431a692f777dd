#include "cdan/param_tree.hpp"

#include <cmath>

#include "cdan/errors.hpp"
#include "cdan/rng.hpp"

namespace cdan {

namespace {
constexpr std::size_t npos = static_cast<std::size_t>(-1);
}

std::size_t ParamTree::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == name) return i;
  }
  return npos;
}

void ParamTree::add(std::string name, Tensor value) {
  if (find(name) != npos) throw ConfigError("ParamTree: duplicate leaf '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamTree::contains(std::string_view name) const { return find(name) != npos; }

Tensor& ParamTree::at(std::string_view name) {
  const std::size_t i = find(name);
  if (i == npos) throw ConfigError("ParamTree: no leaf '" + std::string(name) + "'");
  return entries_[i].second;
}

const Tensor& ParamTree::at(std::string_view name) const {
  return const_cast<ParamTree*>(this)->at(name);
}

std::size_t ParamTree::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

ParamTree ParamTree::zeros_like() const {
  ParamTree out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor(t.shape()));
  return out;
}

bool ParamTree::same_layout(const ParamTree& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace cdan
