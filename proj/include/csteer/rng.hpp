#pragma once

#include <cstdint>

#include "csteer/errors.hpp"

namespace csteer {

// SplitMix64 finalizer. Every random draw in the library is a pure function
// of a key chain built with this, so sampling is reproducible regardless of
// evaluation order or thread count.
std::uint64_t mix64(std::uint64_t x);

// Counter-based generator: fork() derives an independent stream, uniform01()
// reads the draw at a counter. No mutable state anywhere.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed);

  CounterRng fork(std::uint64_t stream_id) const;
  double uniform01(std::uint64_t counter) const;  // in [0, 1)

 private:
  std::uint64_t key_;
};

// Standard normal CDF and quantile (Acklam's approximation plus one Halley
// refinement; good to ~1e-15 away from the extreme tails).
double normal_cdf(double x);
double normal_quantile(double p);

struct DistributionSpec {
  enum class Kind { PointMass, Uniform, TruncatedGaussian };

  Kind kind = Kind::PointMass;
  double value = 0.0;     // PointMass
  double lo = 0.0;        // Uniform / TruncatedGaussian support
  double hi = 0.0;
  double mean = 0.0;      // TruncatedGaussian, pre-truncation
  double variance = 0.0;

  static DistributionSpec point_mass(double v);
  static DistributionSpec uniform(double lo, double hi);
  static DistributionSpec truncated_gaussian(double mean, double variance,
                                             double lo, double hi);

  // Throws InvalidDistribution for empty supports, negative variance, or a
  // truncation window of numerically zero mass.
  void validate() const;

  // Inverse-CDF transform of u in [0,1); result always lies in the support.
  double sample(double u) const;

  double support_lo() const;
  double support_hi() const;
  bool is_degenerate() const;  // zero spread
};

}  // namespace csteer
