#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "csteer/nlp.hpp"
#include "csteer/rollout.hpp"
#include "csteer/steering.hpp"

namespace csteer {

struct RefinementParams {
  int alpha = 250;       // training Monte Carlo particles per iteration
  int beta = 1000;       // held-out testing Monte Carlo particles
  int gamma = 10;        // optimization particles in the first solve
  int eta = 10;          // particles added per iteration
  int max_iter = 10;     // optimization solve cap
  double delta_th = 1e-3;  // squared-gap convergence threshold

  void validate() const;
};

struct RefinementIteration {
  int n_particles = 0;
  NlpStatus status = NlpStatus::Optimal;
  // Empty when the solve was not Optimal; no training MC runs then.
  std::optional<double> delta_train;
  std::vector<int> selected;  // indices into this iteration's training batch
  double wall_time = 0.0;
};

struct RefinementLog {
  std::vector<RefinementIteration> iterations;
  double delta_test = 0.0;
};

struct RefinementResult {
  ControllerPolicy policy;
  double delta_test = 0.0;
  RefinementLog log;
  // Final optimization particle set, selected training particles included
  // exactly as sampled.
  std::vector<Particle> particles;
};

// Seed of the training batch scored in the given iteration, and of the
// held-out test batch. Both are derived from the run seed; together with
// the logged selection indices they reproduce every added particle.
std::uint64_t refinement_train_seed(std::uint64_t seed, int iteration);
std::uint64_t refinement_test_seed(std::uint64_t seed);

// Indices of the eta largest violations, ties broken by lower index.
std::vector<int> select_worst(const std::vector<double>& violations, int eta);

// Same rule with each trajectory scored by its safe-set violation; a failed
// rollout (nullopt) scores +infinity and is selected first.
std::vector<int> select_worst(
    const std::vector<std::optional<Trajectory>>& trajectories,
    const SafeSet& safe, int eta);

// Grows the optimization particle set until the trained policy's estimated
// safety probability reaches cfg.Delta: each Optimal solve is scored by a
// fresh alpha-particle Monte Carlo and the eta worst training particles are
// added; a failed solve adds eta fresh random particles instead. The last
// Optimal policy is certified on beta held-out particles. Training, testing,
// and optimization particles come from disjoint streams derived from seed.
// Throws NoFeasibleSolutionEver when no solve is Optimal within max_iter.
RefinementResult important_particle(const UncertainLcs& sys,
                                    const SteeringConfig& cfg,
                                    const RefinementParams& params,
                                    std::uint64_t seed,
                                    const SolverOptions& opts = {},
                                    int threads = 1);

}  // namespace csteer
