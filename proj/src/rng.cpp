#include "csteer/rng.hpp"

#include <cmath>
#include <limits>

namespace csteer {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed) : key_(mix64(seed)) {}

CounterRng CounterRng::fork(std::uint64_t stream_id) const {
  CounterRng child(0);
  child.key_ = mix64(key_ ^ mix64(stream_id + 0x632BE59BD9B4E019ull));
  return child;
}

double CounterRng::uniform01(std::uint64_t counter) const {
  std::uint64_t bits = mix64(key_ + counter * 0xD1B54A32D192ED03ull);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (p < p_low) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the exact CDF.
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

DistributionSpec DistributionSpec::point_mass(double v) {
  DistributionSpec s;
  s.kind = Kind::PointMass;
  s.value = v;
  return s;
}

DistributionSpec DistributionSpec::uniform(double lo, double hi) {
  DistributionSpec s;
  s.kind = Kind::Uniform;
  s.lo = lo;
  s.hi = hi;
  return s;
}

DistributionSpec DistributionSpec::truncated_gaussian(double mean,
                                                      double variance,
                                                      double lo, double hi) {
  DistributionSpec s;
  s.kind = Kind::TruncatedGaussian;
  s.mean = mean;
  s.variance = variance;
  s.lo = lo;
  s.hi = hi;
  return s;
}

void DistributionSpec::validate() const {
  switch (kind) {
    case Kind::PointMass:
      if (!std::isfinite(value))
        throw InvalidDistribution("point mass value must be finite");
      return;
    case Kind::Uniform:
      if (!(lo <= hi)) throw InvalidDistribution("uniform requires lo <= hi");
      if (!std::isfinite(lo) || !std::isfinite(hi))
        throw InvalidDistribution("uniform bounds must be finite");
      return;
    case Kind::TruncatedGaussian: {
      if (!(lo <= hi))
        throw InvalidDistribution("truncation requires lo <= hi");
      if (!(variance >= 0.0))
        throw InvalidDistribution("variance must be nonnegative");
      if (variance == 0.0) {
        if (mean < lo || mean > hi)
          throw InvalidDistribution(
              "zero-variance gaussian with mean outside the window");
        return;
      }
      double sd = std::sqrt(variance);
      double mass =
          normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd);
      if (!(mass > 1e-300))
        throw InvalidDistribution("truncation window has zero mass");
      return;
    }
  }
  throw InvalidDistribution("unknown distribution kind");
}

double DistributionSpec::sample(double u) const {
  switch (kind) {
    case Kind::PointMass:
      return value;
    case Kind::Uniform:
      return lo + u * (hi - lo);
    case Kind::TruncatedGaussian: {
      if (variance == 0.0) return mean;
      double sd = std::sqrt(variance);
      double fa = normal_cdf((lo - mean) / sd);
      double fb = normal_cdf((hi - mean) / sd);
      double x = mean + sd * normal_quantile(fa + u * (fb - fa));
      return std::min(hi, std::max(lo, x));
    }
  }
  return value;
}

double DistributionSpec::support_lo() const {
  return kind == Kind::PointMass ? value : lo;
}

double DistributionSpec::support_hi() const {
  return kind == Kind::PointMass ? value : hi;
}

bool DistributionSpec::is_degenerate() const {
  switch (kind) {
    case Kind::PointMass:
      return true;
    case Kind::Uniform:
      return lo == hi;
    case Kind::TruncatedGaussian:
      return variance == 0.0 || lo == hi;
  }
  return true;
}

}  // namespace csteer
