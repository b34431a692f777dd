#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cdan {

// Seeded random source with a serializable state. Distribution transforms are
// implemented here rather than with <random> distributions so that streams are
// identical across standard libraries and carry no hidden cached values.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform on (lo, hi].
  double uniform_open_closed(double lo, double hi) { return hi - (hi - lo) * uniform(); }

  // Box-Muller, one draw per call.
  double normal();

  std::size_t index(std::size_t n);

  std::vector<std::uint64_t> state() const;
  void set_state(const std::vector<std::uint64_t>& words);

 private:
  std::mt19937_64 engine_;
};

// Stateless 64-bit mixer used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace cdan
