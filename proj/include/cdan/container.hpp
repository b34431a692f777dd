#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cdan/adam.hpp"
#include "cdan/param_tree.hpp"
#include "cdan/tensor.hpp"

namespace cdan {

// Self-describing binary container: named f64 tensors and u64 arrays, in
// insertion order, little-endian.
//
//   "CDANCKPT" | u32 version | u32 entry_count
//   entry: u32 name_len | name | u8 dtype (1 = f64, 2 = u64) | u32 rank | u64 dims[rank] | payload
//
// Entry order is preserved on load, so a loaded container re-saves to the same bytes.
class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(std::string name, const Tensor& t);
  void put_u64(std::string name, std::vector<std::uint64_t> values);
  void put_u64(std::string name, std::uint64_t value) { put_u64(std::move(name), std::vector<std::uint64_t>{value}); }
  void put_f64(std::string name, double value) { put(std::move(name), Tensor::scalar(value)); }
  void put_tree(const std::string& prefix, const ParamTree& tree);
  void put_adam(const std::string& prefix, const AdamState& state);

  bool contains(std::string_view name) const;
  const Tensor& tensor(std::string_view name) const;
  const std::vector<std::uint64_t>& u64(std::string_view name) const;
  std::uint64_t u64_scalar(std::string_view name) const;
  double f64_scalar(std::string_view name) const { return tensor(name).item(); }
  // Rebuilds a tree with the layout of `like` from entries "<prefix><leaf name>".
  ParamTree tree(const std::string& prefix, const ParamTree& like) const;
  AdamState adam(const std::string& prefix, const ParamTree& like) const;
  std::vector<std::string> names_with_prefix(std::string_view prefix) const;

  std::vector<std::uint8_t> to_bytes() const;
  static Container from_bytes(const std::vector<std::uint8_t>& bytes);
  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::string name;
    std::uint8_t dtype = 1;
    Tensor f64;
    Shape u64_shape;
    std::vector<std::uint64_t> u64;
  };
  const Entry& find(std::string_view name) const;
  void push(Entry e);

  std::vector<Entry> entries_;
};

}  // namespace cdan
