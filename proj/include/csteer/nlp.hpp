#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <utility>
#include <vector>

#include "csteer/errors.hpp"

namespace csteer {

struct BilinearTerm {
  int i = 0;
  int j = 0;
  double coeff = 0.0;
};

// constant + sum coeff * x_i + sum coeff * x_i * x_j. Degree two at most,
// which keeps every gradient exact and cheap.
struct ScalarExpr {
  double constant = 0.0;
  std::vector<std::pair<int, double>> linear;
  std::vector<BilinearTerm> bilinear;

  static ScalarExpr constant_expr(double c);
  static ScalarExpr var(int index, double coeff = 1.0);

  ScalarExpr& add_constant(double c);
  ScalarExpr& add_linear(int index, double coeff);
  ScalarExpr& add_bilinear(int i, int j, double coeff);
  ScalarExpr& operator+=(const ScalarExpr& other);
  ScalarExpr& operator*=(double s);

  double eval(const Eigen::VectorXd& x) const;
  // grad += scale * d(expr)/dx at x.
  void accumulate_gradient(const Eigen::VectorXd& x, double scale,
                           Eigen::VectorXd& grad) const;
  int max_index() const;
  bool is_affine() const { return bilinear.empty(); }
};

// min 1/2 x' H x + c' x + constant
// s.t. eq(x) = 0, ineq(x) <= 0, lb <= x <= ub,
//      and for each pair (a, b): a >= 0, b >= 0, a * b = 0.
struct NlpProblem {
  int n_vars = 0;
  Eigen::SparseMatrix<double> hessian;  // symmetric PSD
  Eigen::VectorXd gradient;             // linear objective term
  double objective_constant = 0.0;
  std::vector<ScalarExpr> eq_constraints;
  std::vector<ScalarExpr> ineq_constraints;
  Eigen::VectorXd lb, ub;  // +-infinity allowed
  std::vector<std::pair<ScalarExpr, ScalarExpr>> complementarity_pairs;
  Eigen::VectorXd initial_point;  // optional; empty means zeros

  void validate() const;
  double objective(const Eigen::VectorXd& x) const;
};

enum class NlpStatus { Optimal, Infeasible, RestorationFailed, MaxIterations };

const char* to_string(NlpStatus s);

struct SolverOptions {
  double tol_kkt = 1e-6;
  double tol_feas = 1e-6;
  double tol_comp = 1e-8;
  double eps_start = 1e-2;  // complementarity relaxation schedule
  double eps_end = 1e-8;
  double eps_factor = 0.1;
  int max_total_iterations = 3000;
  std::string log_path;  // per-iteration CSV when nonempty
};

struct SolveReport {
  NlpStatus status = NlpStatus::MaxIterations;
  Eigen::VectorXd x_star;
  double objective_value = 0.0;
  double kkt_residual = 0.0;
  double max_constraint_violation = 0.0;
  double max_complementarity_residual = 0.0;
  int iterations = 0;
  double wall_time = 0.0;  // seconds
};

SolveReport solve(const NlpProblem& p, const SolverOptions& opts = {});

// Multipliers for the eps_c-relaxed problem. The inequality rows are ordered
// as: the problem's own inequalities first, then per complementarity pair
// the triple (-a <= 0, -b <= 0, a*b - eps_c <= 0).
struct Multipliers {
  Eigen::VectorXd eq;
  Eigen::VectorXd ineq;   // >= 0
  Eigen::VectorXd lower;  // bound duals, >= 0, one per variable
  Eigen::VectorXd upper;
};

struct KktComponents {
  double stationarity = 0.0;
  double feasibility = 0.0;      // primal violation of eq/ineq/bounds
  double complementarity = 0.0;  // multiplier complementary slackness
};

KktComponents kkt_components(const NlpProblem& p, double eps_c,
                             const Eigen::VectorXd& x, const Multipliers& m);

// Infinity norm over all KKT components of the relaxed problem.
double kkt_residual(const NlpProblem& p, double eps_c,
                    const Eigen::VectorXd& x, const Multipliers& m);

}  // namespace csteer
