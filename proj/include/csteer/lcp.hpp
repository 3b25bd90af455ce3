#pragma once

#include <Eigen/Dense>
#include <vector>

#include "csteer/errors.hpp"

namespace csteer {

// Linear complementarity problem: find lambda with
//   lambda >= 0,  w = M lambda + q >= 0,  lambda' w = 0.
struct LcpProblem {
  Eigen::MatrixXd M;
  Eigen::VectorXd q;

  int size() const { return static_cast<int>(q.size()); }
};

struct LcpSolution {
  Eigen::VectorXd lambda;
  Eigen::VectorXd w;  // M lambda + q
  double complementarity_residual = 0.0;
};

inline constexpr double kLcpFeasTol = 1e-10;
inline constexpr double kLcpCompTol = 1e-10;

// Unique solution of an LCP whose matrix is P. Principal pivoting with
// least-index tie-breaking; throws NoSolutionFound when the pivot budget
// (2^min(n,20)) is exhausted or a principal block is singular, both of
// which signal a non-P matrix.
LcpSolution solve(const LcpProblem& p);

// Test oracle: solves the linear system for every complementary index set
// (lambda free on S, w free elsewhere) and keeps the sign-feasible ones,
// deduplicated. Requires n <= 16.
std::vector<LcpSolution> enumerate_solutions(const LcpProblem& p);

// True iff every principal minor of M is strictly positive (above 1e-12).
// Exhaustive over all 2^n - 1 nonempty index subsets; requires n <= 16.
bool is_p_matrix(const Eigen::MatrixXd& M);

}  // namespace csteer
