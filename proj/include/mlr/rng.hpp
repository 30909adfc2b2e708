#pragma once

#include <cstdint>

namespace mlr {

// Named substreams derived from one 64-bit master seed. Values drawn from one
// stream are independent of how much any other stream is consumed, so solver
// settings can never perturb the dataset and vice versa.
enum class Stream : std::uint64_t {
  DataX = 1,
  DataNoise = 2,
  DataLatent = 3,
  Init = 4,
  SolverNoise = 5,
  SolverLatent = 6,
  Participation = 7,
  RefVec = 8,
  BetaStar = 9,
};

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter). No mutable state, safe to share across threads.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream);

  std::uint64_t bits(std::uint64_t counter) const;

  // Uniform on the open interval (0, 1); never returns an endpoint.
  double uniform(std::uint64_t counter) const;

  // Standard normal via the inverse CDF.
  double normal(std::uint64_t counter) const;

 private:
  std::uint64_t key_;
};

// Inverse standard-normal CDF on (0, 1). Rational approximation polished by
// one Halley step; absolute error below 1e-13 across the open interval.
double normal_quantile(double p);

}  // namespace mlr
