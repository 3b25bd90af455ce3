#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "csteer/benchmarks.hpp"
#include "csteer/errors.hpp"
#include "csteer/lcp.hpp"
#include "csteer/rollout.hpp"

using namespace csteer;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

// Plain re-coding of the cartpole physics, kept separate from the library
// on purpose: forces from the closed-form spring law, accelerations from
// the linearized equations of motion, explicit Euler.
MatrixXd simulate_cartpole(const CartpoleParams& p, double k1, double k2,
                           const VectorXd& x0, const VectorXd& u_seq) {
  MatrixXd xs(p.horizon + 1, 4);
  xs.row(0) = x0.transpose();
  for (int k = 0; k < p.horizon; ++k) {
    const double pos = xs(k, 0), ang = xs(k, 1);
    const double tip = pos + p.l * ang;
    const double lam1 = std::max(0.0, k1 * (tip - p.d));
    const double lam2 = std::max(0.0, k2 * (-tip - p.d));
    const double u = u_seq(k);
    const double pos_dd = (u - p.m_p * p.g * ang) / p.m_c;
    const double ang_dd = p.g * (p.m_c + p.m_p) * ang / (p.l * p.m_c) -
                          u / (p.l * p.m_c) + (lam2 - lam1) / (p.m_p * p.l);
    xs(k + 1, 0) = pos + p.dt * xs(k, 2);
    xs(k + 1, 1) = ang + p.dt * xs(k, 3);
    xs(k + 1, 2) = xs(k, 2) + p.dt * pos_dd;
    xs(k + 1, 3) = xs(k, 3) + p.dt * ang_dd;
  }
  return xs;
}

MatrixXd simulate_acrobot(const AcrobotParams& p, double k, double l2,
                          const VectorXd& x0, const VectorXd& u_seq) {
  Eigen::Matrix2d M;
  M << p.m1 * p.l1 * p.l1 + p.m2 * (p.l1 + l2) * (p.l1 + l2),
      p.m2 * l2 * (p.l1 + l2), p.m2 * l2 * (p.l1 + l2), p.m2 * l2 * l2;
  Eigen::Matrix2d G;
  G << p.g * ((p.m1 + p.m2) * p.l1 + p.m2 * l2), p.g * p.m2 * l2,
      p.g * p.m2 * l2, p.g * p.m2 * l2;

  MatrixXd xs(p.horizon + 1, 4);
  xs.row(0) = x0.transpose();
  for (int s = 0; s < p.horizon; ++s) {
    const double th1 = xs(s, 0);
    const double lam1 = std::max(0.0, -k * (p.d + th1));
    const double lam2 = std::max(0.0, k * (th1 - p.d));
    const Vector2d q(xs(s, 0), xs(s, 1));
    const Vector2d tau(lam1 - lam2, u_seq(s));
    const Vector2d qdd = M.ldlt().solve(G * q + tau);
    xs(s + 1, 0) = xs(s, 0) + p.dt * xs(s, 2);
    xs(s + 1, 1) = xs(s, 1) + p.dt * xs(s, 3);
    xs(s + 1, 2) = xs(s, 2) + p.dt * qdd(0);
    xs(s + 1, 3) = xs(s, 3) + p.dt * qdd(1);
  }
  return xs;
}

std::vector<DistributionSpec> point_state(double a, double b, double c,
                                          double d) {
  return {DistributionSpec::point_mass(a), DistributionSpec::point_mass(b),
          DistributionSpec::point_mass(c), DistributionSpec::point_mass(d)};
}

}  // namespace

TEST_CASE("softwall row resolves to the spring force law") {
  CHECK_THROWS_AS(softwall_complementarity(0.0, AffineGap{}),
                  NonpositiveStiffness);
  CHECK_THROWS_AS(softwall_complementarity(-2.0, AffineGap{}),
                  NonpositiveStiffness);

  // Positive gap leaves the wall inactive; negative gap gives lam = -k phi.
  for (double k : {0.5, 1.0, 4.0, 10.0, 17.5}) {
    auto row = softwall_complementarity(k, AffineGap{});
    CHECK(row.f_diag == 1.0 / k);
    for (double phi = -1.0; phi <= 1.0; phi += 0.0625) {
      LcpProblem lcp;
      lcp.M = MatrixXd::Constant(1, 1, row.f_diag);
      lcp.q = VectorXd::Constant(1, phi);
      const double lam = solve(lcp).lambda(0);
      CHECK(lam == doctest::Approx(std::max(0.0, -k * phi)).epsilon(1e-12));
    }
  }
}

TEST_CASE("cartpole at the origin has both gaps open at distance d") {
  auto sys = make_cartpole();
  ParameterMap xi{{"k1", 10.0}, {"k2", 10.0}};
  auto stages = realize_stages(sys, xi);
  REQUIRE(stages.size() == 6);
  for (const auto& s : stages) {
    // Gap at the origin is just h; the LCP then keeps lam = 0.
    CHECK(s.h(0) == doctest::Approx(0.15));
    CHECK(s.h(1) == doctest::Approx(0.15));
    CHECK(s.F(0, 0) == doctest::Approx(0.1));
    CHECK(s.F(1, 1) == doctest::Approx(0.1));
    CHECK(s.F(0, 1) == 0.0);
    LcpProblem lcp{s.F, s.h};
    CHECK(solve(lcp).lambda.isZero(0.0));
  }
}

TEST_CASE("stiffness support corners keep the contact matrix P") {
  auto sys = make_cartpole();
  for (auto [k1, k2] : {std::pair{5.0, 5.0}, std::pair{14.0, 12.0},
                        std::pair{5.0, 12.0}, std::pair{14.0, 5.0}}) {
    auto stages = realize_stages(sys, {{"k1", k1}, {"k2", k2}});
    CHECK(is_p_matrix(stages[0].F));
  }
  auto acro = make_acrobot();
  for (double k : {0.6, 1.6})
    for (double l2 : {0.7, 1.3}) {
      auto stages = realize_stages(acro, {{"k", k}, {"l2", l2}});
      CHECK(is_p_matrix(stages[0].F));
    }
}

TEST_CASE("cartpole rollout matches the independent simulator") {
  CartpoleParams p;
  p.x0_specs = point_state(0.1, 0.15, 0.0, 0.0);
  p.k1_spec = DistributionSpec::point_mass(7.3);
  p.k2_spec = DistributionSpec::point_mass(9.1);
  auto sys = make_cartpole(p);

  auto policy = ControllerPolicy::zero(sys.dims);
  SUBCASE("zero policy") {}
  SUBCASE("constant push") { policy.v.setConstant(0.4); }
  SUBCASE("alternating push") {
    for (int k = 0; k < 6; ++k) policy.v(k, 0) = (k % 2) ? -0.3 : 0.2;
  }

  auto traj = rollout(sys, sample_particle(sys, 4, 0), policy);
  VectorXd x0(4);
  x0 << 0.1, 0.15, 0.0, 0.0;
  MatrixXd expect = simulate_cartpole(p, 7.3, 9.1, x0, policy.v.col(0));
  CHECK((traj.x - expect).lpNorm<Eigen::Infinity>() <= 1e-10);

  // First-step wall force is the spring law at the initial tip position.
  const double tip = 0.1 + 0.5 * 0.15;
  CHECK(traj.lambda(0, 0) ==
        doctest::Approx(7.3 * (tip - 0.15)).epsilon(1e-10));
  CHECK(traj.lambda(0, 1) == 0.0);
}

TEST_CASE("acrobot rollout matches the independent simulator") {
  AcrobotParams p;
  p.x0_specs = point_state(-0.25, 0.2, -0.3, 0.1);  // beyond the lower limit
  p.k_spec = DistributionSpec::point_mass(1.1);
  p.l2_spec = DistributionSpec::point_mass(0.97);
  auto sys = make_acrobot(p);

  auto policy = ControllerPolicy::zero(sys.dims);
  for (int k = 0; k < p.horizon; ++k) policy.v(k, 0) = 0.1 * std::sin(0.7 * k);

  auto traj = rollout(sys, sample_particle(sys, 21, 0), policy);
  VectorXd x0(4);
  x0 << -0.25, 0.2, -0.3, 0.1;
  MatrixXd expect = simulate_acrobot(p, 1.1, 0.97, x0, policy.v.col(0));
  CHECK((traj.x - expect).lpNorm<Eigen::Infinity>() <= 1e-10);
  // theta1 starts past the lower limit, so the first limit force is active.
  CHECK(traj.lambda(0, 0) ==
        doctest::Approx(1.1 * (0.25 - 0.2)).epsilon(1e-10));
  CHECK(traj.lambda(0, 1) == 0.0);
}

TEST_CASE("every sampled particle realizes a valid contact model") {
  for (const auto& sys : {make_cartpole(), make_acrobot()}) {
    for (int i = 0; i < 10000; ++i) {
      const Particle particle = sample_particle(sys, 1234, i);
      CHECK_NOTHROW(realize_stages(sys, particle.xi));
    }
  }
}

TEST_CASE("solved contact forces follow max(0, -k phi) at random states") {
  auto sys = make_cartpole();
  CounterRng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const double k1 = 5.0 + 9.0 * rng.uniform01(4 * trial);
    const double k2 = 5.0 + 7.0 * rng.uniform01(4 * trial + 1);
    auto stages = realize_stages(sys, {{"k1", k1}, {"k2", k2}});
    VectorXd x(4);
    x << 0.8 * rng.uniform01(4 * trial + 2) - 0.4,
        1.2 * rng.uniform01(4 * trial + 3) - 0.6, 0.0, 0.0;
    LcpProblem lcp{stages[0].F, stages[0].D * x + stages[0].h};
    const VectorXd lam = solve(lcp).lambda;
    const double tip = x(0) + 0.5 * x(1);
    CHECK(lam(0) == doctest::Approx(std::max(0.0, k1 * (tip - 0.15)))
                        .epsilon(1e-8));
    CHECK(lam(1) == doctest::Approx(std::max(0.0, k2 * (-tip - 0.15)))
                        .epsilon(1e-8));
  }
}

TEST_CASE("upright pole is an unstable equilibrium away from the walls") {
  CartpoleParams p;
  p.x0_specs = point_state(0.0, 0.01, 0.0, 0.0);
  auto sys = make_cartpole(p);
  auto traj =
      rollout(sys, sample_particle(sys, 8, 0), ControllerPolicy::zero(sys.dims));
  for (int k = 0; k < 6; ++k) {
    CHECK(std::abs(traj.x(k + 1, 1)) >= std::abs(traj.x(k, 1)));
    CHECK(traj.lambda(k, 0) == 0.0);  // never reaches a wall from 0.01 rad
    CHECK(traj.lambda(k, 1) == 0.0);
  }
  CHECK(std::abs(traj.x(6, 1)) > 0.01);
}

TEST_CASE("parameter validation rejects nonpositive physicals") {
  CartpoleParams bad;
  bad.k1_spec = DistributionSpec::uniform(0.0, 5.0);
  CHECK_THROWS_AS(make_cartpole(bad), NonpositiveStiffness);
  CartpoleParams bad2;
  bad2.m_c = 0.0;
  CHECK_THROWS_AS(make_cartpole(bad2), NonpositiveStiffness);
  AcrobotParams bad3;
  bad3.l2_spec = DistributionSpec::truncated_gaussian(0.1, 1.0, -0.5, 0.5);
  CHECK_THROWS_AS(make_acrobot(bad3), NonpositiveStiffness);
}
