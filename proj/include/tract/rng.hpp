#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tract/common.hpp"

namespace tract {

// Seeded generator with hand-rolled distributions. std::mt19937_64 output is
// pinned by the standard; the mappings below are pinned here, so a (seed,
// build) pair always replays the same stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // Distinct deterministic stream per (seed, stream) pair.
  static Rng keyed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  uint64_t next_u64() { return eng_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [lo, hi], inclusive, unbiased via rejection.
  int uniform_int(int lo, int hi) {
    if (lo > hi) throw ContractError("uniform_int: empty range");
    const uint64_t range = static_cast<uint64_t>(hi) - lo + 1;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t r;
    do {
      r = eng_();
    } while (r >= limit);
    return lo + static_cast<int>(r % range);
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tract
