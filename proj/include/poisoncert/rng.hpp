#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace poisoncert {

/// splitmix64 finalizer; derives independent stream seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// The std:: distributions are implementation-defined, so every draw is built
// here on top of the raw mt19937_64 stream (which the standard pins down).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  double normal();
  double exponential();
  bool bernoulli(double p);
  /// Uniform integer in [0, n); n must be positive.
  std::size_t index(std::size_t n);
  /// Uniform point of the probability simplex of dimension k (Dirichlet(1,...,1)).
  std::vector<double> simplex(std::size_t k);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace poisoncert
