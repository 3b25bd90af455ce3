#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "csteer/nlp.hpp"
#include "csteer/rollout.hpp"
#include "csteer/sdlcs.hpp"

namespace csteer {

// Halfspace c . u_k <= d on the realized control at every step.
struct ControlHalfspace {
  Eigen::VectorXd c;
  double d = 0.0;
};

struct SteeringConfig {
  Eigen::MatrixXd Q;  // state weight, symmetric PSD
  Eigen::MatrixXd R;  // control weight, symmetric PD
  Eigen::VectorXd x_d;
  double Delta = 0.0;  // minimum probability of staying safe
  std::vector<ControlHalfspace> control_polytope;
  SafeSet safe;
  double epsilon_boundary = 1e-6;  // t_i >= -epsilon_boundary
  PolicyMode mode = PolicyMode::OpenLoop;

  void validate(const Dims& dims) const;
};

// Per-particle chance-constraint block at a solution. The accepted relations
// are w_plus (1 - z) = 0, w_minus z = 0, t + w_plus - w_minus = 0.
struct ChanceBlock {
  double t = 0.0;
  double z = 0.0;
  double w_plus = 0.0;
  double w_minus = 0.0;
};

// Index map of the MPCC decision vector. Shared controller variables come
// first (v, then K, then L when the mode uses them), followed by one block
// per particle: x rows 1..T, lambda rows for lam_1..lam_T, then t, z,
// w_plus, w_minus. x_0 is not a variable; it is each particle's constant.
struct MpccLayout {
  Dims dims;
  int n_particles = 0;
  PolicyMode mode = PolicyMode::OpenLoop;
  int v_count = 0;
  int k_count = 0;
  int l_count = 0;
  int shared_count = 0;
  int per_particle = 0;
  int n_vars = 0;

  int v_index(int k, int a) const;
  int k_index(int k, int a, int b) const;
  int l_index(int k, int a, int c) const;
  int particle_base(int i) const;
  int x_index(int i, int k, int a) const;       // k in 1..T
  int lambda_index(int i, int k, int c) const;  // row k holds lam_{k+1}
  int t_index(int i) const;
  int z_index(int i) const;
  int w_plus_index(int i) const;
  int w_minus_index(int i) const;
};

MpccLayout make_layout(const Dims& dims, int n_particles, PolicyMode mode);

// Assembles the single-level MPCC over the given particles:
//   - dynamics equalities per particle with the mean states and contact
//     forces expanded as (1/N)-sums over particle variables,
//   - complementarity pairs (lam, contact margin) per particle and step,
//   - realized per-particle controls constrained to the control polytope,
//   - safe margins g_j(x_i) <= t_i, the chance row (1/N) sum z_i >= Delta,
//     and the stationarity block tying t, z, w_plus, w_minus together.
// The objective penalizes the mean-state tracking error under Q and the
// per-particle controls under R; the feedback part of the control cost is
// evaluated on deviations frozen at the warm start, which keeps the
// objective quadratic and regularizes the gains. The warm start itself is
// the zero-input rollout of every particle.
NlpProblem build_mpcc(const UncertainLcs& sys,
                      const std::vector<Particle>& particles,
                      const SteeringConfig& cfg);

// Forced value of z when t is frozen: t < 0 forces z = 1, t > 0 forces
// z = 0, t = 0 leaves z free in [0, 1] (nullopt).
std::optional<double> encode_chance(double t);

// Reads the per-particle chance blocks from a solution vector.
std::vector<ChanceBlock> chance_blocks(const MpccLayout& layout,
                                       const Eigen::VectorXd& x);

// Reads particle i's optimized state trajectory; row 0 is the particle's
// initial state.
Eigen::MatrixXd solution_state(const MpccLayout& layout,
                               const Eigen::VectorXd& x,
                               const Particle& particle);

// Reads particle i's optimized contact forces, row k holding lam_{k+1}.
Eigen::MatrixXd solution_contact(const MpccLayout& layout,
                                 const Eigen::VectorXd& x, int i);

// Turns an Optimal MPCC solution into a controller: v, K, L from the shared
// block and references from the particle means. Throws NotOptimal otherwise.
ControllerPolicy extract_policy(const UncertainLcs& sys,
                                const std::vector<Particle>& particles,
                                const SolveReport& report,
                                const SteeringConfig& cfg);

// Largest safe-set margin over the trajectory; <= 0 iff the trajectory is
// inside the safe set. Negative infinity when the set has no constraints.
double violation(const Trajectory& traj, const SafeSet& safe);

}  // namespace csteer
