#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vitc {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG. Distributions are hand-rolled on top of the mt19937_64
// bit stream so results do not depend on the standard library's
// (implementation-defined) distribution code.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_seed_(seed), eng_(seed) {}

  // Independent substream keyed by id. Substreams of substreams are fine.
  Rng stream(uint64_t id) const {
    uint64_t s = base_seed_;
    splitmix64(s);
    s ^= 0x94d049bb133111ebull * (id + 1);
    return Rng(splitmix64(s));
  }

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1]
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Gumbel(0, 1)
  double gumbel() {
    double u = uniform_pos();
    return -std::log(-std::log(u));
  }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % range);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(0, i);
      std::swap(v[i], v[j]);
    }
  }

 private:
  uint64_t base_seed_;
  std::mt19937_64 eng_;
};

}  // namespace vitc
