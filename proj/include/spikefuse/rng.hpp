#pragma once

#include <cstdint>

namespace spikefuse {

// splitmix64 mixing step. Used both as a stream generator and to derive
// independent seeds from (seed, salt...) tuples so that results never depend
// on scheduling or draw order elsewhere in the program.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

// Small deterministic PRNG whose byte-level behaviour does not depend on the
// standard library implementation (std::uniform_*_distribution is
// implementation-defined, which would break replay guarantees).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our scales.
  std::uint64_t next_below(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  bool bernoulli(double p) { return next_double() < p; }

 private:
  std::uint64_t state_;
};

// Derived seed for a named sub-stream; order-independent reproducibility.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt_a,
                                 std::uint64_t salt_b = 0,
                                 std::uint64_t salt_c = 0) {
  return hash_combine(hash_combine(hash_combine(seed, salt_a), salt_b),
                      salt_c);
}

}  // namespace spikefuse
