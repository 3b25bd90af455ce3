#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "csteer/sdlcs.hpp"

namespace csteer {

enum class PolicyMode { OpenLoop, StateFeedback, ContactAware };

// u_k = v_k + K_k (x_k - x_ref_k) + L_k (lam_{k+1} - lambda_ref_k).
// OpenLoop keeps K = L = 0, StateFeedback keeps L = 0.
struct ControllerPolicy {
  PolicyMode mode = PolicyMode::OpenLoop;
  Eigen::MatrixXd v;                // T x n_u feedforward
  std::vector<Eigen::MatrixXd> K;   // T gains, each n_u x n_x
  std::vector<Eigen::MatrixXd> L;   // T gains, each n_u x n_c
  Eigen::MatrixXd x_ref;            // (T+1) x n_x mean-state reference
  Eigen::MatrixXd lambda_ref;       // T x n_c, row k references lam_{k+1}

  static ControllerPolicy zero(const Dims& dims,
                               PolicyMode mode = PolicyMode::OpenLoop);
  void validate(const Dims& dims) const;
};

struct Trajectory {
  Eigen::MatrixXd x;       // (T+1) x n_x, row k is x_k
  Eigen::MatrixXd lambda;  // T x n_c, row k is lam_{k+1}
  Eigen::MatrixXd u;       // T x n_u realized controls
};

// One halfspace a . x_k - b <= 0 on the state at a single step.
struct SafeConstraint {
  int step = 0;
  Eigen::VectorXd a;
  double b = 0.0;
};

struct SafeSet {
  std::vector<SafeConstraint> constraints;

  void validate(const Dims& dims) const;
  bool contains(const Trajectory& traj) const;
};

// Exact propagation of the SDLCS for one particle under a policy: at each
// step the closed-loop LCP in lam_{k+1} is solved, then the state advances.
// Throws NotPMatrix when the closed-loop matrix F + E L fails the P check
// and propagates NoSolutionFound from the LCP solver.
Trajectory rollout(const UncertainLcs& sys, const Particle& particle,
                   const ControllerPolicy& policy);

struct SafetyEstimate {
  double delta_hat = 0.0;
  // Index-aligned with particle indices 0..n-1; a particle whose rollout
  // failed (counted unsafe) holds nullopt.
  std::vector<std::optional<Trajectory>> trajectories;
};

// Monte Carlo estimate of Pr(trajectory stays in the safe set) with n
// particles drawn from `seed`. Deterministic for any thread count: results
// are reduced in particle-index order.
SafetyEstimate estimate_safety(const UncertainLcs& sys,
                               const ControllerPolicy& policy,
                               const SafeSet& safe, int n, std::uint64_t seed,
                               int threads = 1);

struct Moments {
  Eigen::MatrixXd x_mean;              // (T+1) x n_x
  Eigen::MatrixXd lambda_mean;         // T x n_c
  std::vector<Eigen::MatrixXd> x_cov;  // T+1 unbiased sample covariances
};

// Arithmetic means and unbiased sample covariances; covariance is the zero
// matrix when a single trajectory is supplied.
Moments moments(std::span<const Trajectory> trajectories);

// Convenience: drops the failed slots of a SafetyEstimate.
std::vector<Trajectory> collect_valid(
    const std::vector<std::optional<Trajectory>>& trajectories);

}  // namespace csteer
