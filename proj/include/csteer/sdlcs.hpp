#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "csteer/rng.hpp"

namespace csteer {

using ParameterMap = std::map<std::string, double>;

struct Dims {
  int n_x = 0;
  int n_u = 0;
  int n_c = 0;
  int horizon = 0;  // number of control steps T
  double dt = 0.0;
};

// One step of the uncertain system, realized for a concrete parameter:
//   x_{k+1} = A x_k + B u_k + C lam_{k+1} + g + w_k
//   0 <= lam_{k+1}  perp  D x_k + E u_k + F lam_{k+1} + h + l_k >= 0
struct StageMatrices {
  Eigen::MatrixXd A, B, C, D, E, F;
  Eigen::VectorXd g, h;

  void validate(const Dims& dims) const;
};

using StageBuilder =
    std::function<StageMatrices(int step, const ParameterMap& xi)>;

struct UncertainLcs {
  Dims dims;
  std::map<std::string, DistributionSpec> parameter_specs;
  StageBuilder stage_builder;  // deterministic in (step, xi)
  std::vector<DistributionSpec> process_noise_specs;          // n_x entries
  std::vector<DistributionSpec> complementarity_noise_specs;  // n_c entries
  std::vector<DistributionSpec> initial_state_specs;          // n_x entries

  void validate() const;
};

// One realization of all uncertain quantities.
struct Particle {
  int index = 0;
  ParameterMap xi;
  Eigen::MatrixXd w;   // horizon x n_x additive process noise
  Eigen::MatrixXd l;   // horizon x n_c complementarity noise
  Eigen::VectorXd x0;  // initial state
};

// Deterministic in (seed, index); independent streams across indices.
Particle sample_particle(const UncertainLcs& sys, std::uint64_t seed,
                         int index);

// Builds the horizon's stage matrices for a realized parameter and verifies
// the P-matrix assumption on every F_k (n_c <= 16). Throws NotPMatrix with
// the offending step otherwise.
std::vector<StageMatrices> realize_stages(const UncertainLcs& sys,
                                          const ParameterMap& xi);

}  // namespace csteer
