#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mfb {

// xoshiro256** seeded through splitmix64. Only integer arithmetic is used, so
// a seed produces the same stream on every platform and compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). Unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; advances this generator by one draw.
  Rng split();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) { shuffle(std::span<T>(items)); }

 private:
  std::uint64_t s_[4];
};

}  // namespace mfb
