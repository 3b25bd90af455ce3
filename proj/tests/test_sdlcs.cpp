#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "csteer/sdlcs.hpp"

using namespace csteer;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

UncertainLcs scalar_system(DistributionSpec x0_spec,
                           DistributionSpec param_spec) {
  UncertainLcs sys;
  sys.dims = {1, 1, 1, 3, 0.1};
  sys.parameter_specs["k"] = param_spec;
  sys.stage_builder = [](int, const ParameterMap& xi) {
    StageMatrices m;
    m.A = MatrixXd::Identity(1, 1);
    m.B = MatrixXd::Zero(1, 1);
    m.C = MatrixXd::Zero(1, 1);
    m.D = MatrixXd::Zero(1, 1);
    m.E = MatrixXd::Zero(1, 1);
    m.F = MatrixXd::Constant(1, 1, 1.0 / xi.at("k"));
    m.g = VectorXd::Zero(1);
    m.h = VectorXd::Constant(1, 1.0);
    return m;
  };
  sys.process_noise_specs = {DistributionSpec::point_mass(0.0)};
  sys.complementarity_noise_specs = {DistributionSpec::point_mass(0.0)};
  sys.initial_state_specs = {x0_spec};
  return sys;
}

double truncated_normal_mean(double mu, double var, double lo, double hi) {
  double sd = std::sqrt(var);
  double a = (lo - mu) / sd, b = (hi - mu) / sd;
  auto pdf = [](double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  };
  return mu + sd * (pdf(a) - pdf(b)) / (normal_cdf(b) - normal_cdf(a));
}

}  // namespace

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {1e-6, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-6}) {
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("point-mass specs reproduce nominal values at every index") {
  auto sys = scalar_system(DistributionSpec::point_mass(0.4),
                           DistributionSpec::point_mass(10.0));
  for (int i : {0, 1, 5, 117}) {
    Particle p = sample_particle(sys, 7, i);
    CHECK(p.x0(0) == 0.4);
    CHECK(p.xi.at("k") == 10.0);
    CHECK(p.w.isZero(0));
    CHECK(p.l.isZero(0));
  }
}

TEST_CASE("uniform stiffness samples stay in the band") {
  auto sys = scalar_system(DistributionSpec::point_mass(0.0),
                           DistributionSpec::uniform(5.0, 14.0));
  for (int i = 0; i < 500; ++i) {
    Particle p = sample_particle(sys, 3, i);
    CHECK(p.xi.at("k") >= 5.0);
    CHECK(p.xi.at("k") <= 14.0);
  }
}

TEST_CASE("truncated gaussian: support and empirical mean") {
  auto check_spec = [](double mu, double var, double lo, double hi) {
    DistributionSpec spec =
        DistributionSpec::truncated_gaussian(mu, var, lo, hi);
    spec.validate();
    CounterRng rng = CounterRng(12345).fork(0);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      double x = spec.sample(rng.uniform01(i));
      REQUIRE(x >= lo);
      REQUIRE(x <= hi);
      sum += x;
    }
    double analytic = truncated_normal_mean(mu, var, lo, hi);
    CHECK(std::abs(sum / n - analytic) < 0.01);
  };
  check_spec(1.0, 0.01, 0.7, 1.3);
  check_spec(1.0, 0.01, 0.9, 1.3);  // asymmetric window
}

TEST_CASE("zero-mass truncation window is rejected") {
  auto spec = DistributionSpec::truncated_gaussian(0.0, 1e-6, 50.0, 51.0);
  CHECK_THROWS_AS(spec.validate(), InvalidDistribution);
  auto sys = scalar_system(DistributionSpec::point_mass(0.0), spec);
  CHECK_THROWS_AS(sample_particle(sys, 0, 0), InvalidDistribution);
}

TEST_CASE("no two of 1e4 draws identical for non-degenerate specs") {
  auto sys = scalar_system(DistributionSpec::uniform(-1.0, 1.0),
                           DistributionSpec::uniform(5.0, 14.0));
  std::set<std::pair<double, double>> seen;
  for (int i = 0; i < 10000; ++i) {
    Particle p = sample_particle(sys, 11, i);
    auto [it, fresh] = seen.insert({p.x0(0), p.xi.at("k")});
    CHECK(fresh);
  }
}

TEST_CASE("sampling is deterministic in (seed, index)") {
  auto sys = scalar_system(DistributionSpec::uniform(-1.0, 1.0),
                           DistributionSpec::uniform(5.0, 14.0));
  Particle a = sample_particle(sys, 42, 17);
  Particle b = sample_particle(sys, 42, 17);
  CHECK(std::memcmp(a.x0.data(), b.x0.data(), sizeof(double)) == 0);
  CHECK(a.xi == b.xi);
  Particle c = sample_particle(sys, 43, 17);
  CHECK(a.xi.at("k") != c.xi.at("k"));
}

TEST_CASE("time-invariant builder yields identical stages") {
  auto sys = scalar_system(DistributionSpec::point_mass(0.0),
                           DistributionSpec::point_mass(10.0));
  auto stages = realize_stages(sys, {{"k", 10.0}});
  REQUIRE(stages.size() == 3);
  for (const auto& m : stages) {
    CHECK(m.F(0, 0) == doctest::Approx(0.1));
    CHECK(m.A(0, 0) == 1.0);
  }
  // bitwise repeatability
  auto again = realize_stages(sys, {{"k", 10.0}});
  for (size_t k = 0; k < stages.size(); ++k)
    CHECK(std::memcmp(stages[k].F.data(), again[k].F.data(),
                      sizeof(double)) == 0);
}

TEST_CASE("non-P stage matrix fails with the offending step") {
  auto sys = scalar_system(DistributionSpec::point_mass(0.0),
                           DistributionSpec::point_mass(10.0));
  sys.stage_builder = [base = sys.stage_builder](int k, const ParameterMap& xi) {
    StageMatrices m = base(k, xi);
    if (k == 2) m.F = MatrixXd::Constant(1, 1, -1.0);
    return m;
  };
  try {
    realize_stages(sys, {{"k", 10.0}});
    FAIL("expected NotPMatrix");
  } catch (const NotPMatrix& e) {
    CHECK(e.step == 2);
  }
}

TEST_CASE("missing parameter is reported") {
  auto sys = scalar_system(DistributionSpec::point_mass(0.0),
                           DistributionSpec::point_mass(10.0));
  CHECK_THROWS_AS(realize_stages(sys, {}), DimensionMismatch);
}
