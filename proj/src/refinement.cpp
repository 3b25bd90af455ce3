#include "csteer/refinement.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stream tags separating the training batches and the held-out test batch
// from the optimization particle draws made directly under `seed`.
constexpr std::uint64_t kTrainStream = 0x74726e00;
constexpr std::uint64_t kTestStream = 0x74737400;

}  // namespace

std::uint64_t refinement_train_seed(std::uint64_t seed, int iteration) {
  return mix64(seed ^ mix64(kTrainStream + static_cast<std::uint64_t>(iteration)));
}

std::uint64_t refinement_test_seed(std::uint64_t seed) {
  return mix64(seed ^ mix64(kTestStream));
}

void RefinementParams::validate() const {
  if (alpha < 1 || beta < 1 || gamma < 1 || eta < 1)
    throw ConfigError("alpha, beta, gamma, eta must all be >= 1");
  if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  if (!(delta_th > 0.0)) throw ConfigError("delta_th must be positive");
  if (eta > alpha)
    throw ConfigError("eta must not exceed alpha; selection draws from the "
                      "training batch");
}

std::vector<int> select_worst(const std::vector<double>& violations,
                              int eta) {
  if (eta < 1 || eta > static_cast<int>(violations.size()))
    throw DimensionMismatch("eta must lie in [1, violations.size()]");
  std::vector<int> order(violations.size());
  std::iota(order.begin(), order.end(), 0);
  auto score = [&](int i) {
    const double v = violations[i];
    return std::isnan(v) ? kInf : v;
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double va = score(a), vb = score(b);
    if (va != vb) return va > vb;
    return a < b;
  });
  order.resize(eta);
  return order;
}

std::vector<int> select_worst(
    const std::vector<std::optional<Trajectory>>& trajectories,
    const SafeSet& safe, int eta) {
  std::vector<double> violations;
  violations.reserve(trajectories.size());
  for (const auto& traj : trajectories)
    violations.push_back(traj ? violation(*traj, safe) : kInf);
  return select_worst(violations, eta);
}

RefinementResult important_particle(const UncertainLcs& sys,
                                    const SteeringConfig& cfg,
                                    const RefinementParams& params,
                                    std::uint64_t seed,
                                    const SolverOptions& opts, int threads) {
  sys.validate();
  cfg.validate(sys.dims);
  params.validate();

  std::vector<Particle> particles;
  particles.reserve(params.gamma + params.max_iter * params.eta);
  for (int i = 0; i < params.gamma; ++i)
    particles.push_back(sample_particle(sys, seed, i));
  std::uint64_t next_fresh = params.gamma;

  RefinementResult out;
  std::optional<ControllerPolicy> best;
  double delta_train = -kInf;

  for (int iter = 0; iter < params.max_iter; ++iter) {
    const double gap = cfg.Delta - delta_train;
    if (gap * gap < params.delta_th || !(cfg.Delta > delta_train)) break;

    const auto t0 = std::chrono::steady_clock::now();
    RefinementIteration entry;
    entry.n_particles = static_cast<int>(particles.size());

    NlpProblem mpcc = build_mpcc(sys, particles, cfg);
    const SolveReport report = solve(mpcc, opts);
    entry.status = report.status;

    if (report.status == NlpStatus::Optimal) {
      best = extract_policy(sys, particles, report, cfg);
      const std::uint64_t train_seed = refinement_train_seed(seed, iter);
      const SafetyEstimate est = estimate_safety(
          sys, *best, cfg.safe, params.alpha, train_seed, threads);
      delta_train = est.delta_hat;
      entry.delta_train = delta_train;
      entry.selected = select_worst(est.trajectories, cfg.safe, params.eta);
      // The chosen training particles join the optimization set exactly as
      // sampled; drawing at the same key reproduces them bit for bit.
      for (int idx : entry.selected)
        particles.push_back(sample_particle(sys, train_seed, idx));
    } else {
      for (int t = 0; t < params.eta; ++t)
        particles.push_back(sample_particle(sys, seed, next_fresh++));
    }

    entry.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    out.log.iterations.push_back(std::move(entry));
  }

  if (!best)
    throw NoFeasibleSolutionEver("no Optimal solve within max_iter");

  const SafetyEstimate test =
      estimate_safety(sys, *best, cfg.safe, params.beta,
                      refinement_test_seed(seed), threads);
  out.policy = std::move(*best);
  out.delta_test = test.delta_hat;
  out.log.delta_test = test.delta_hat;
  out.particles = std::move(particles);
  return out;
}

}  // namespace csteer
