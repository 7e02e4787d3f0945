#pragma once

// Seeded random streams.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, so a seed reproduces the same stream on every conforming
// platform. Distributions are derived here (not via <random> distribution
// classes, whose algorithms are implementation-defined):
//   uniform()  = (next_u64() >> 11) * 2^-53, in [0, 1)
//   normal()   = Box-Muller on two uniforms, second variate cached
// Independent substreams come from derive(key): the child seed is
// splitmix64(seed ^ fnv1a64(key)).

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

namespace iecl {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  Rng derive(std::string_view key) const { return Rng(splitmix64(seed_ ^ fnv1a64(key))); }
  Rng derive(std::uint64_t key) const { return Rng(splitmix64(seed_ ^ splitmix64(key + 0x9e3779b97f4a7c15ULL))); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> cached_normal_;
};

}  // namespace iecl
