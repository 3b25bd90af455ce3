#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "csteer/errors.hpp"
#include "csteer/steering.hpp"

using namespace csteer;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Double integrator pushed against one softwall at p = 0.5.
UncertainLcs wall_system(int horizon) {
  UncertainLcs sys;
  sys.dims = {2, 1, 1, horizon, 0.1};
  sys.parameter_specs["k"] = DistributionSpec::uniform(4.0, 6.0);
  sys.stage_builder = [](int, const ParameterMap& xi) {
    const double dt = 0.1, d = 0.5;
    StageMatrices m;
    m.A = MatrixXd{{1.0, dt}, {0.0, 1.0}};
    m.B = MatrixXd{{0.0}, {dt}};
    m.C = MatrixXd{{0.0}, {-dt}};
    m.D = MatrixXd{{-1.0, 0.0}};
    m.E = MatrixXd::Zero(1, 1);
    m.F = MatrixXd::Constant(1, 1, 1.0 / xi.at("k"));
    m.g = VectorXd::Zero(2);
    m.h = VectorXd::Constant(1, d);
    return m;
  };
  sys.process_noise_specs = {DistributionSpec::point_mass(0.0),
                             DistributionSpec::point_mass(0.0)};
  sys.complementarity_noise_specs = {DistributionSpec::point_mass(0.0)};
  sys.initial_state_specs = {DistributionSpec::point_mass(0.3),
                             DistributionSpec::point_mass(0.0)};
  return sys;
}

// Two-contact system where the LCP couples to the input, so contact gains
// change the realized forces.
UncertainLcs coupled_system(int horizon) {
  UncertainLcs sys;
  sys.dims = {2, 1, 2, horizon, 0.1};
  sys.parameter_specs["k1"] = DistributionSpec::uniform(2.0, 4.0);
  sys.parameter_specs["k2"] = DistributionSpec::uniform(2.0, 4.0);
  sys.stage_builder = [](int, const ParameterMap& xi) {
    StageMatrices m;
    m.A = MatrixXd{{1.0, 0.1}, {-0.05, 1.0}};
    m.B = MatrixXd{{0.0}, {0.1}};
    m.C = MatrixXd{{0.02, -0.02}, {0.1, -0.1}};
    m.D = MatrixXd{{1.0, 0.2}, {-1.0, 0.1}};
    m.E = MatrixXd{{0.2}, {-0.1}};
    m.F = MatrixXd{{xi.at("k1"), 0.3}, {0.3, xi.at("k2")}};
    m.g = VectorXd::Zero(2);
    m.h = VectorXd{{-0.4, -0.3}};
    return m;
  };
  sys.process_noise_specs = {
      DistributionSpec::uniform(-0.01, 0.01),
      DistributionSpec::truncated_gaussian(0.0, 1e-4, -0.05, 0.05)};
  sys.complementarity_noise_specs = {DistributionSpec::uniform(-0.02, 0.02),
                                     DistributionSpec::point_mass(0.0)};
  sys.initial_state_specs = {DistributionSpec::uniform(0.3, 0.5),
                             DistributionSpec::point_mass(-0.1)};
  return sys;
}

std::vector<Particle> draw_particles(const UncertainLcs& sys, int n,
                                     std::uint64_t seed) {
  std::vector<Particle> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sample_particle(sys, seed, i));
  return out;
}

SteeringConfig wall_config(PolicyMode mode) {
  SteeringConfig cfg;
  cfg.Q = MatrixXd{{1.0, 0.0}, {0.0, 0.1}};
  cfg.R = MatrixXd::Constant(1, 1, 1.0);
  cfg.x_d = VectorXd{{0.2, 0.0}};
  cfg.Delta = 0.5;
  cfg.control_polytope = {{VectorXd::Constant(1, 1.0), 10.0},
                          {VectorXd::Constant(1, -1.0), 10.0}};
  for (int k = 1; k <= 3; ++k)
    cfg.safe.constraints.push_back({k, VectorXd{{1.0, 0.0}}, 0.45});
  cfg.safe.constraints.push_back({0, VectorXd{{1.0, 0.0}}, 0.45});
  cfg.mode = mode;
  return cfg;
}

SteeringConfig coupled_config(PolicyMode mode) {
  SteeringConfig cfg;
  cfg.Q = MatrixXd{{1.0, 0.0}, {0.0, 0.2}};
  cfg.R = MatrixXd::Constant(1, 1, 0.5);
  cfg.x_d = VectorXd{{0.1, 0.0}};
  cfg.Delta = 0.5;
  cfg.control_polytope = {{VectorXd::Constant(1, 1.0), 8.0},
                          {VectorXd::Constant(1, -1.0), 8.0}};
  for (int k = 1; k <= 3; ++k)
    cfg.safe.constraints.push_back({k, VectorXd{{1.0, 0.0}}, 2.0});
  cfg.mode = mode;
  return cfg;
}

}  // namespace

TEST_CASE("layout matches the independent variable count") {
  Dims d{1, 1, 1, 2, 0.1};
  // Shared: v (T nu) + K (T nu nx) + L (T nu nc); per particle:
  // T (nx + nc) + the four chance scalars.
  const int shared = 2 * (1 + 1 + 1);
  const int per = 2 * (1 + 1) + 4;
  MpccLayout lay = make_layout(d, 2, PolicyMode::ContactAware);
  CHECK(lay.n_vars == shared + 2 * per);
  CHECK(lay.n_vars == 22);
  CHECK(lay.per_particle == 8);

  CHECK(make_layout(d, 2, PolicyMode::OpenLoop).n_vars == 2 + 2 * per);
  CHECK(make_layout(d, 2, PolicyMode::StateFeedback).n_vars == 4 + 2 * per);

  // Index helpers cover 0..n_vars-1 exactly once.
  std::vector<int> seen(lay.n_vars, 0);
  for (int k = 0; k < 2; ++k) {
    ++seen[lay.v_index(k, 0)];
    ++seen[lay.k_index(k, 0, 0)];
    ++seen[lay.l_index(k, 0, 0)];
  }
  for (int i = 0; i < 2; ++i) {
    for (int k = 1; k <= 2; ++k) ++seen[lay.x_index(i, k, 0)];
    for (int k = 0; k < 2; ++k) ++seen[lay.lambda_index(i, k, 0)];
    ++seen[lay.t_index(i)];
    ++seen[lay.z_index(i)];
    ++seen[lay.w_plus_index(i)];
    ++seen[lay.w_minus_index(i)];
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

  UncertainLcs sys = wall_system(2);
  SteeringConfig cfg = wall_config(PolicyMode::ContactAware);
  cfg.safe.constraints.clear();
  cfg.safe.constraints.push_back({1, VectorXd{{1.0, 0.0}}, 0.45});
  NlpProblem p = build_mpcc(sys, draw_particles(sys, 2, 7), cfg);
  CHECK(p.n_vars == make_layout(sys.dims, 2, cfg.mode).n_vars);
}

TEST_CASE("chance row scales to the promised particle count") {
  UncertainLcs sys = wall_system(2);
  SteeringConfig cfg = wall_config(PolicyMode::OpenLoop);
  cfg.safe.constraints.clear();
  cfg.safe.constraints.push_back({1, VectorXd{{1.0, 0.0}}, 0.45});
  cfg.Delta = 0.5;
  const int n = 4;
  NlpProblem p = build_mpcc(sys, draw_particles(sys, n, 3), cfg);
  MpccLayout lay = make_layout(sys.dims, n, cfg.mode);

  const ScalarExpr& chance = p.ineq_constraints.back();
  CHECK(chance.bilinear.empty());
  CHECK(chance.constant == doctest::Approx(0.5));
  REQUIRE(chance.linear.size() == 4);
  for (const auto& [idx, coeff] : chance.linear) {
    bool is_z = false;
    for (int i = 0; i < n; ++i) is_z = is_z || idx == lay.z_index(i);
    CHECK(is_z);
    CHECK(coeff == doctest::Approx(-0.25));
  }
  // Scaled by -N the row reads sum z_i >= 2.
  VectorXd x = VectorXd::Zero(lay.n_vars);
  for (int i = 0; i < 2; ++i) x(lay.z_index(i)) = 1.0;
  CHECK(chance.eval(x) == doctest::Approx(0.0));
  x(lay.z_index(2)) = 0.09;
  CHECK(chance.eval(x) < 0.0 + 1e-12);
}

TEST_CASE("frozen t forces the documented z") {
  CHECK(encode_chance(-1.0).value() == 1.0);
  CHECK(encode_chance(1.0).value() == 0.0);
  CHECK(!encode_chance(0.0).has_value());
}

TEST_CASE("open loop problems stay affine in the particle variables") {
  UncertainLcs sys = coupled_system(3);
  SteeringConfig cfg = coupled_config(PolicyMode::OpenLoop);
  NlpProblem p = build_mpcc(sys, draw_particles(sys, 3, 11), cfg);
  for (const auto& e : p.eq_constraints) CHECK(e.is_affine());
  for (const auto& e : p.ineq_constraints) CHECK(e.is_affine());
  for (const auto& [a, b] : p.complementarity_pairs) {
    CHECK(a.is_affine());
    CHECK(b.is_affine());
  }
}

TEST_CASE("single particle open loop reference is the optimized trajectory") {
  UncertainLcs sys = wall_system(3);
  SteeringConfig cfg = wall_config(PolicyMode::OpenLoop);
  std::vector<Particle> particles = draw_particles(sys, 1, 5);
  NlpProblem p = build_mpcc(sys, particles, cfg);
  SolveReport r = solve(p);
  REQUIRE(r.status == NlpStatus::Optimal);

  ControllerPolicy pol = extract_policy(sys, particles, r, cfg);
  MpccLayout lay = make_layout(sys.dims, 1, cfg.mode);
  const MatrixXd xsol = solution_state(lay, r.x_star, particles[0]);
  CHECK((pol.x_ref - xsol).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((pol.x_ref.row(0).transpose() - particles[0].x0).cwiseAbs().maxCoeff() ==
        0.0);
  const MatrixXd lsol = solution_contact(lay, r.x_star, 0);
  CHECK((pol.lambda_ref - lsol).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("contact aware solutions re-simulate to the optimized particles") {
  UncertainLcs sys = coupled_system(3);
  SteeringConfig cfg = coupled_config(PolicyMode::ContactAware);
  std::vector<Particle> particles = draw_particles(sys, 3, 21);
  NlpProblem p = build_mpcc(sys, particles, cfg);
  SolveReport r = solve(p);
  REQUIRE(r.status == NlpStatus::Optimal);

  ControllerPolicy pol = extract_policy(sys, particles, r, cfg);
  MpccLayout lay = make_layout(sys.dims, 3, cfg.mode);
  for (const Particle& pt : particles) {
    const Trajectory traj = rollout(sys, pt, pol);
    const MatrixXd xsol = solution_state(lay, r.x_star, pt);
    CHECK((traj.x - xsol).cwiseAbs().maxCoeff() <= 1e-6);
    const MatrixXd lsol = solution_contact(lay, r.x_star, pt.index);
    CHECK((traj.lambda - lsol).cwiseAbs().maxCoeff() <= 1e-5);
  }

  // Solution-level invariants: complementarity, nonnegative forces, the
  // chance row, and safe margins of the confidently-safe particles.
  CHECK(r.max_complementarity_residual <= 1e-8);
  double z_sum = 0.0;
  const std::vector<ChanceBlock> blocks = chance_blocks(lay, r.x_star);
  for (int i = 0; i < 3; ++i) {
    const ChanceBlock& cb = blocks[i];
    z_sum += cb.z;
    CHECK(cb.z >= -1e-6);
    CHECK(cb.z <= 1.0 + 1e-6);
    CHECK(std::abs(cb.t + cb.w_plus - cb.w_minus) <= 1e-6);
    const MatrixXd lsol = solution_contact(lay, r.x_star, i);
    CHECK(lsol.minCoeff() >= -1e-8);
    if (cb.z >= 0.5) {
      Trajectory sol;
      sol.x = solution_state(lay, r.x_star, particles[i]);
      sol.lambda = lsol;
      sol.u = MatrixXd::Zero(sys.dims.horizon, sys.dims.n_u);
      CHECK(violation(sol, cfg.safe) <= cfg.epsilon_boundary + 1e-6);
    }
  }
  CHECK(z_sum / 3.0 >= cfg.Delta - 1e-6);
}

TEST_CASE("state feedback mode extracts a zero contact gain") {
  UncertainLcs sys = coupled_system(3);
  SteeringConfig cfg = coupled_config(PolicyMode::StateFeedback);
  std::vector<Particle> particles = draw_particles(sys, 3, 33);
  SolveReport r = solve(build_mpcc(sys, particles, cfg));
  REQUIRE(r.status == NlpStatus::Optimal);
  ControllerPolicy pol = extract_policy(sys, particles, r, cfg);
  CHECK(pol.mode == PolicyMode::StateFeedback);
  for (const MatrixXd& l : pol.L) CHECK(l.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("objective is invariant under particle reordering") {
  UncertainLcs sys = coupled_system(3);
  SteeringConfig cfg = coupled_config(PolicyMode::ContactAware);
  std::vector<Particle> particles = draw_particles(sys, 3, 55);
  std::vector<Particle> shuffled = {particles[2], particles[0], particles[1]};
  // Re-number so each particle's index matches its slot.
  for (int i = 0; i < 3; ++i) shuffled[i].index = i;

  NlpProblem pa = build_mpcc(sys, particles, cfg);
  NlpProblem pb = build_mpcc(sys, shuffled, cfg);
  MpccLayout lay = make_layout(sys.dims, 3, cfg.mode);

  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd xa(lay.n_vars);
  for (int i = 0; i < lay.n_vars; ++i) xa(i) = u(rng);
  // Problem b sees the same assignment with the particle blocks permuted
  // alongside the particles: slot 0 holds old particle 2 and so on.
  const int perm[3] = {2, 0, 1};
  VectorXd xb = xa;
  for (int slot = 0; slot < 3; ++slot) {
    const int src = perm[slot];
    xb.segment(lay.particle_base(slot), lay.per_particle) =
        xa.segment(lay.particle_base(src), lay.per_particle);
  }
  CHECK(pa.objective(xa) ==
        doctest::Approx(pb.objective(xb)).epsilon(1e-12));
}

TEST_CASE("warm start seeds the particle blocks with nominal rollouts") {
  UncertainLcs sys = wall_system(3);
  SteeringConfig cfg = wall_config(PolicyMode::StateFeedback);
  std::vector<Particle> particles = draw_particles(sys, 2, 77);
  NlpProblem p = build_mpcc(sys, particles, cfg);
  MpccLayout lay = make_layout(sys.dims, 2, cfg.mode);
  REQUIRE(p.initial_point.size() == lay.n_vars);

  const Trajectory nominal =
      rollout(sys, particles[0],
              ControllerPolicy::zero(sys.dims, PolicyMode::OpenLoop));
  for (int k = 1; k <= 3; ++k)
    for (int a = 0; a < 2; ++a)
      CHECK(p.initial_point(lay.x_index(0, k, a)) ==
            doctest::Approx(nominal.x(k, a)).epsilon(1e-14));
  CHECK(p.initial_point(lay.z_index(0)) == doctest::Approx(cfg.Delta));
  // Shared controller variables start at zero.
  for (int idx = 0; idx < lay.shared_count; ++idx)
    CHECK(p.initial_point(idx) == 0.0);
}

TEST_CASE("violation reports the largest safe margin") {
  SafeSet safe;
  safe.constraints.push_back({1, VectorXd{{1.0, 0.0}}, 0.35});
  Trajectory traj;
  traj.x = MatrixXd{{0.0, 0.0}, {0.5, -0.2}, {0.1, 0.0}};
  traj.lambda = MatrixXd::Zero(2, 1);
  traj.u = MatrixXd::Zero(2, 1);
  CHECK(violation(traj, safe) == doctest::Approx(0.15));

  traj.x(1, 0) = 0.2;
  CHECK(violation(traj, safe) < 0.0);

  SafeSet empty;
  CHECK(violation(traj, empty) == -kInf);
}

TEST_CASE("violation sign agrees with the monte carlo classifier") {
  std::mt19937 rng(101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SafeSet safe;
  safe.constraints.push_back({1, VectorXd{{1.0, 0.3}}, 0.2});
  safe.constraints.push_back({2, VectorXd{{-0.5, 1.0}}, 0.4});
  safe.constraints.push_back({3, VectorXd{{0.7, -0.2}}, 0.1});
  for (int trial = 0; trial < 1000; ++trial) {
    Trajectory traj;
    traj.x = MatrixXd(4, 2);
    for (int k = 0; k < 4; ++k)
      for (int a = 0; a < 2; ++a) traj.x(k, a) = u(rng);
    traj.lambda = MatrixXd::Zero(3, 1);
    traj.u = MatrixXd::Zero(3, 1);
    CHECK((violation(traj, safe) <= 0.0) == safe.contains(traj));
  }
}

TEST_CASE("steering inputs are validated") {
  UncertainLcs sys = wall_system(3);
  SteeringConfig cfg = wall_config(PolicyMode::OpenLoop);
  CHECK_THROWS_AS(build_mpcc(sys, {}, cfg), EmptyParticles);

  std::vector<Particle> particles = draw_particles(sys, 1, 1);
  SteeringConfig bad_delta = cfg;
  bad_delta.Delta = 1.5;
  CHECK_THROWS_AS(build_mpcc(sys, particles, bad_delta), ConfigError);

  SteeringConfig bad_q = cfg;
  bad_q.Q = MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(build_mpcc(sys, particles, bad_q), DimensionMismatch);

  SteeringConfig bad_r = cfg;
  bad_r.R = MatrixXd::Zero(1, 1);
  CHECK_THROWS_AS(build_mpcc(sys, particles, bad_r), ConfigError);

  SolveReport not_solved;
  not_solved.status = NlpStatus::MaxIterations;
  CHECK_THROWS_AS(extract_policy(sys, particles, not_solved, cfg), NotOptimal);
}
