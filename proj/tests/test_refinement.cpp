#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "csteer/errors.hpp"
#include "csteer/refinement.hpp"

using namespace csteer;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Noisy single integrator with one far-away softwall; the contact stays
// inactive so safety is driven purely by the sampled x0 and process noise.
UncertainLcs noisy_integrator(int horizon) {
  UncertainLcs sys;
  sys.dims = {1, 1, 1, horizon, 0.1};
  sys.parameter_specs["k"] = DistributionSpec::uniform(4.0, 6.0);
  sys.stage_builder = [](int, const ParameterMap& xi) {
    StageMatrices m;
    m.A = MatrixXd::Constant(1, 1, 1.0);
    m.B = MatrixXd::Constant(1, 1, 0.1);
    m.C = MatrixXd::Constant(1, 1, 0.01);
    m.D = MatrixXd::Constant(1, 1, 1.0);
    m.E = MatrixXd::Zero(1, 1);
    m.F = MatrixXd::Constant(1, 1, 1.0 / xi.at("k"));
    m.g = VectorXd::Zero(1);
    m.h = VectorXd::Constant(1, 5.0);
    return m;
  };
  sys.process_noise_specs = {DistributionSpec::uniform(-0.05, 0.05)};
  sys.complementarity_noise_specs = {DistributionSpec::point_mass(0.0)};
  sys.initial_state_specs = {DistributionSpec::uniform(0.1, 0.3)};
  return sys;
}

SteeringConfig integrator_config(double x_target, double delta) {
  SteeringConfig cfg;
  cfg.Q = MatrixXd::Constant(1, 1, 1.0);
  cfg.R = MatrixXd::Constant(1, 1, 0.001);  // cheap control, the bound binds
  cfg.x_d = VectorXd::Constant(1, x_target);
  cfg.Delta = delta;
  cfg.control_polytope = {{VectorXd::Constant(1, 1.0), 5.0},
                          {VectorXd::Constant(1, -1.0), 5.0}};
  for (int k = 1; k <= 2; ++k)
    cfg.safe.constraints.push_back({k, VectorXd::Constant(1, 1.0), 0.45});
  cfg.mode = PolicyMode::OpenLoop;
  return cfg;
}

RefinementParams small_params() {
  RefinementParams p;
  p.alpha = 30;
  p.beta = 50;
  p.gamma = 2;
  p.eta = 3;
  p.max_iter = 5;
  p.delta_th = 1e-3;
  return p;
}

Trajectory flat_trajectory(double x1, double x2) {
  Trajectory t;
  t.x = MatrixXd{{0.0}, {x1}, {x2}};
  t.lambda = MatrixXd::Zero(2, 1);
  t.u = MatrixXd::Zero(2, 1);
  return t;
}

bool same_particle(const Particle& a, const Particle& b) {
  if (a.index != b.index || a.xi != b.xi) return false;
  if ((a.x0 - b.x0).cwiseAbs().maxCoeff() != 0.0) return false;
  if ((a.w - b.w).cwiseAbs().maxCoeff() != 0.0) return false;
  return (a.l - b.l).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

TEST_CASE("select_worst picks the largest violations") {
  const std::vector<double> v = {0.5, -0.2, 0.9, 0.1};
  CHECK(select_worst(v, 2) == std::vector<int>{2, 0});
}

TEST_CASE("select_worst on all-safe values picks those nearest the boundary") {
  const std::vector<double> v = {-0.5, -0.2, -0.9, -0.1};
  CHECK(select_worst(v, 2) == std::vector<int>{3, 1});
}

TEST_CASE("select_worst breaks ties by lower index") {
  const std::vector<double> v = {0.3, 0.7, 0.3, 0.7};
  CHECK(select_worst(v, 3) == std::vector<int>{1, 3, 0});
}

TEST_CASE("select_worst matches a full sort oracle on random values") {
  std::mt19937 gen(91);
  std::uniform_int_distribution<int> coarse(-10, 10);
  std::vector<double> v(250);
  for (double& x : v) x = coarse(gen) / 10.0;  // repeated values force ties

  const int eta = 37;
  std::vector<std::pair<double, int>> oracle;
  for (int i = 0; i < 250; ++i) oracle.emplace_back(v[i], i);
  std::stable_sort(oracle.begin(), oracle.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> expect;
  for (int r = 0; r < eta; ++r) expect.push_back(oracle[r].second);

  CHECK(select_worst(v, eta) == expect);
}

TEST_CASE("select_worst validates eta against the batch size") {
  const std::vector<double> v = {0.1, 0.2};
  CHECK_THROWS_AS((void)select_worst(v, 0), DimensionMismatch);
  CHECK_THROWS_AS((void)select_worst(v, 3), DimensionMismatch);
}

TEST_CASE("select_worst scores failed rollouts as infinitely unsafe") {
  SafeSet safe;
  safe.constraints.push_back({1, VectorXd::Constant(1, 1.0), 0.3});

  std::vector<std::optional<Trajectory>> trajs;
  trajs.push_back(flat_trajectory(0.2, 0.0));  // violation -0.1
  trajs.push_back(std::nullopt);               // failed rollout
  trajs.push_back(flat_trajectory(0.9, 0.0));  // violation  0.6

  CHECK(select_worst(trajs, safe, 2) == std::vector<int>{1, 2});
}

TEST_CASE("refinement parameters are validated") {
  RefinementParams p = small_params();
  p.alpha = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_params();
  p.beta = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_params();
  p.gamma = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_params();
  p.eta = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_params();
  p.max_iter = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_params();
  p.delta_th = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = small_params();
  p.eta = p.alpha + 1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK_NOTHROW(small_params().validate());
}

TEST_CASE("a policy that already meets the target stops after one solve") {
  UncertainLcs sys = noisy_integrator(2);
  SteeringConfig cfg = integrator_config(0.2, 0.9);  // safe target
  RefinementParams params = small_params();

  RefinementResult res = important_particle(sys, cfg, params, 17);
  REQUIRE(res.log.iterations.size() == 1);
  const RefinementIteration& it = res.log.iterations[0];
  CHECK(it.status == NlpStatus::Optimal);
  CHECK(it.n_particles == params.gamma);
  REQUIRE(it.delta_train.has_value());
  CHECK(*it.delta_train >= cfg.Delta);
  CHECK(static_cast<int>(it.selected.size()) == params.eta);
  CHECK(it.wall_time >= 0.0);
  CHECK(res.delta_test == res.log.delta_test);
  CHECK(res.delta_test >= 0.9);
  CHECK(static_cast<int>(res.particles.size()) == params.gamma + params.eta);
}

TEST_CASE("an unsafe target is refined across iterations until the guard") {
  UncertainLcs sys = noisy_integrator(2);
  SteeringConfig cfg = integrator_config(0.6, 0.9);  // target beyond the wall
  RefinementParams params = small_params();
  const std::uint64_t seed = 17;

  RefinementResult res = important_particle(sys, cfg, params, seed);
  const auto& iters = res.log.iterations;
  REQUIRE(iters.size() >= 2);

  for (size_t j = 0; j < iters.size(); ++j) {
    CHECK(iters[j].n_particles ==
          params.gamma + static_cast<int>(j) * params.eta);
    CHECK(iters[j].status == NlpStatus::Optimal);
    REQUIRE(iters[j].delta_train.has_value());
    CHECK(static_cast<int>(iters[j].selected.size()) == params.eta);
  }
  CHECK(static_cast<int>(res.particles.size()) ==
        params.gamma + static_cast<int>(iters.size()) * params.eta);

  // Exited before the cap, so the loop guard itself must have failed.
  if (iters.size() < static_cast<size_t>(params.max_iter)) {
    const double dt = *iters.back().delta_train;
    const double gap = cfg.Delta - dt;
    CHECK((gap * gap < params.delta_th || dt >= cfg.Delta));
  }
  CHECK(res.delta_test >= 0.7);
  CHECK(res.delta_test <= 1.0);

  // Training pressure moves the estimate toward the command.
  CHECK(*iters.back().delta_train >= *iters.front().delta_train);
}

TEST_CASE("selected training particles are carried over bit-exact") {
  UncertainLcs sys = noisy_integrator(2);
  SteeringConfig cfg = integrator_config(0.6, 0.9);
  RefinementParams params = small_params();
  const std::uint64_t seed = 17;

  RefinementResult res = important_particle(sys, cfg, params, seed);
  REQUIRE(res.log.iterations.size() >= 2);
  const std::vector<int>& sel = res.log.iterations[0].selected;
  REQUIRE(static_cast<int>(sel.size()) == params.eta);

  const std::uint64_t train0 = refinement_train_seed(seed, 0);
  for (int r = 0; r < params.eta; ++r) {
    const Particle expect = sample_particle(sys, train0, sel[r]);
    CHECK(same_particle(res.particles[params.gamma + r], expect));
  }
}

TEST_CASE("optimization particles and derived batches use distinct streams") {
  UncertainLcs sys = noisy_integrator(2);
  const std::uint64_t seed = 29;
  CHECK(refinement_train_seed(seed, 0) != refinement_train_seed(seed, 1));
  CHECK(refinement_train_seed(seed, 0) != refinement_test_seed(seed));
  const Particle opt0 = sample_particle(sys, seed, 0);
  const Particle train0 = sample_particle(sys, refinement_train_seed(seed, 0), 0);
  CHECK_FALSE(same_particle(opt0, train0));
}

TEST_CASE("a failed solve falls back to fresh random particles") {
  UncertainLcs sys = noisy_integrator(2);
  SteeringConfig cfg = integrator_config(0.6, 0.9);
  RefinementParams params = small_params();
  // Seed chosen so an intermediate solve fails and the loop recovers.
  RefinementResult res = important_particle(sys, cfg, params, 29);

  const auto& iters = res.log.iterations;
  REQUIRE(iters.size() >= 2);
  bool saw_failure = false;
  bool saw_success = false;
  for (size_t j = 0; j < iters.size(); ++j) {
    CHECK(iters[j].n_particles ==
          params.gamma + static_cast<int>(j) * params.eta);
    if (iters[j].status == NlpStatus::Optimal) {
      saw_success = true;
      REQUIRE(iters[j].delta_train.has_value());
      CHECK(static_cast<int>(iters[j].selected.size()) == params.eta);
    } else {
      saw_failure = true;
      CHECK_FALSE(iters[j].delta_train.has_value());
      CHECK(iters[j].selected.empty());
    }
  }
  REQUIRE(saw_failure);
  REQUIRE(saw_success);
  // The particle set still grows by eta per iteration either way.
  CHECK(static_cast<int>(res.particles.size()) ==
        params.gamma + static_cast<int>(iters.size()) * params.eta);
  CHECK(res.delta_test >= 0.7);
}

TEST_CASE("a fixed seed reproduces the whole run") {
  UncertainLcs sys = noisy_integrator(2);
  SteeringConfig cfg = integrator_config(0.6, 0.9);
  RefinementParams params = small_params();

  RefinementResult a = important_particle(sys, cfg, params, 29);
  RefinementResult b = important_particle(sys, cfg, params, 29);

  REQUIRE(a.log.iterations.size() == b.log.iterations.size());
  for (size_t j = 0; j < a.log.iterations.size(); ++j) {
    const auto& ia = a.log.iterations[j];
    const auto& ib = b.log.iterations[j];
    CHECK(ia.n_particles == ib.n_particles);
    CHECK(ia.status == ib.status);
    CHECK(ia.delta_train == ib.delta_train);
    CHECK(ia.selected == ib.selected);
  }
  CHECK(a.delta_test == b.delta_test);
  CHECK((a.policy.v - b.policy.v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.policy.x_ref - b.policy.x_ref).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.policy.lambda_ref - b.policy.lambda_ref).cwiseAbs().maxCoeff() ==
        0.0);
  REQUIRE(a.particles.size() == b.particles.size());
  for (size_t i = 0; i < a.particles.size(); ++i)
    CHECK(same_particle(a.particles[i], b.particles[i]));
}

TEST_CASE("a set that can never be steered safe raises after the cap") {
  UncertainLcs sys = noisy_integrator(2);
  sys.initial_state_specs = {DistributionSpec::point_mass(0.3)};
  SteeringConfig cfg = integrator_config(0.2, 1.0);
  // Step-0 bound the fixed initial state already violates.
  cfg.safe.constraints.push_back({0, VectorXd::Constant(1, 1.0), 0.1});
  RefinementParams params = small_params();
  params.max_iter = 2;

  CHECK_THROWS_AS((void)important_particle(sys, cfg, params, 3),
                  NoFeasibleSolutionEver);
}
