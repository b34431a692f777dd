#include "cdan/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cdan/errors.hpp"

namespace cdan {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kF64 = 1;
constexpr std::uint8_t kU64 = 2;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw LoadError("checkpoint: truncated at byte " + std::to_string(pos));
  }
  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[pos + i]) << (8 * i));
    pos += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  bool done() const { return pos == buf.size(); }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

}  // namespace

void Container::push(Entry e) {
  for (const auto& existing : entries_) {
    if (existing.name == e.name) throw UsageError("checkpoint: duplicate entry '" + e.name + "'");
  }
  entries_.push_back(std::move(e));
}

void Container::put(std::string name, const Tensor& t) {
  Entry e;
  e.name = std::move(name);
  e.dtype = kF64;
  e.f64 = t;
  push(std::move(e));
}

void Container::put_u64(std::string name, std::vector<std::uint64_t> values) {
  Entry e;
  e.name = std::move(name);
  e.dtype = kU64;
  e.u64_shape = {values.size()};
  e.u64 = std::move(values);
  push(std::move(e));
}

void Container::put_tree(const std::string& prefix, const ParamTree& tree) {
  for (const auto& [name, t] : tree) put(prefix + name, t);
}

void Container::put_adam(const std::string& prefix, const AdamState& state) {
  put_u64(prefix + "step", state.step);
  put_tree(prefix + "m/", state.first_moment);
  put_tree(prefix + "v/", state.second_moment);
}

bool Container::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const Container::Entry& Container::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw LoadError("checkpoint: missing entry '" + std::string(name) + "'");
}

const Tensor& Container::tensor(std::string_view name) const {
  const Entry& e = find(name);
  if (e.dtype != kF64) throw LoadError("checkpoint: entry '" + e.name + "' is not f64");
  return e.f64;
}

const std::vector<std::uint64_t>& Container::u64(std::string_view name) const {
  const Entry& e = find(name);
  if (e.dtype != kU64) throw LoadError("checkpoint: entry '" + e.name + "' is not u64");
  return e.u64;
}

std::uint64_t Container::u64_scalar(std::string_view name) const {
  const auto& v = u64(name);
  if (v.size() != 1) throw LoadError("checkpoint: entry '" + std::string(name) + "' is not a scalar");
  return v[0];
}

ParamTree Container::tree(const std::string& prefix, const ParamTree& like) const {
  ParamTree out;
  for (const auto& [name, t] : like) {
    const Tensor& stored = tensor(prefix + name);
    if (stored.shape() != t.shape()) {
      throw LoadError("checkpoint: '" + prefix + name + "' has shape " + shape_string(stored.shape()) +
                      ", expected " + shape_string(t.shape()));
    }
    out.add(name, stored);
  }
  return out;
}

AdamState Container::adam(const std::string& prefix, const ParamTree& like) const {
  return AdamState{tree(prefix + "m/", like), tree(prefix + "v/", like), u64_scalar(prefix + "step")};
}

std::vector<std::string> Container::names_with_prefix(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) out.push_back(e.name);
  }
  return out;
}

std::vector<std::uint8_t> Container::to_bytes() const {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint8_t>(e.dtype);
    const Shape& shape = e.dtype == kF64 ? e.f64.shape() : e.u64_shape;
    w.le<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) w.le<std::uint64_t>(d);
    if (e.dtype == kF64) {
      for (double v : e.f64.values()) w.f64(v);
    } else {
      for (std::uint64_t v : e.u64) w.le<std::uint64_t>(v);
    }
  }
  return std::move(w.out);
}

Container Container::from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw LoadError("checkpoint: bad magic header");
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  Container c;
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    e.name = r.str(r.le<std::uint32_t>());
    e.dtype = r.le<std::uint8_t>();
    if (e.dtype != kF64 && e.dtype != kU64) throw LoadError("checkpoint: unknown dtype in '" + e.name + "'");
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    const std::size_t n = shape_size(shape);
    r.need(n * 8);
    if (e.dtype == kF64) {
      std::vector<double> data(n);
      for (auto& v : data) v = r.f64();
      e.f64 = Tensor(std::move(shape), std::move(data));
    } else {
      e.u64_shape = std::move(shape);
      e.u64.resize(n);
      for (auto& v : e.u64) v = r.le<std::uint64_t>();
    }
    c.push(std::move(e));
  }
  if (!r.done()) throw LoadError("checkpoint: trailing bytes");
  return c;
}

void Container::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw LoadError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

}  // namespace cdan
