// LCP solver via principal pivoting (Murty's least-index scheme).
//
// The active set A holds the indices where lambda is basic. Each round
// solves M[A,A] lambda_A = -q_A, sets lambda = 0 elsewhere, computes
// w = M lambda + q, and flips the least index that is sign-infeasible
// (lambda_j < 0 for j in A, or w_j < 0 for j outside A). For a P-matrix
// this visits each of the 2^n index sets at most once, hence the pivot
// budget; anything that runs past the budget or hits a singular principal
// block is reported as NoSolutionFound.

#include "csteer/lcp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace csteer {

namespace {

void check_problem(const LcpProblem& p) {
  if (p.M.rows() != p.M.cols())
    throw DimensionMismatch("LCP matrix must be square");
  if (p.q.size() != p.M.rows())
    throw DimensionMismatch("LCP q length must match M dimension");
  if (p.q.size() < 1) throw DimensionMismatch("LCP requires n >= 1");
}

// Solve M[A,A] x = -q[A] for the active index list. Returns false when the
// principal block is numerically singular.
bool solve_principal(const Eigen::MatrixXd& M, const Eigen::VectorXd& q,
                     const std::vector<int>& active, Eigen::VectorXd* out) {
  const int m = static_cast<int>(active.size());
  Eigen::MatrixXd sub(m, m);
  Eigen::VectorXd rhs(m);
  for (int r = 0; r < m; ++r) {
    rhs(r) = -q(active[r]);
    for (int c = 0; c < m; ++c) sub(r, c) = M(active[r], active[c]);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
  if (!lu.isInvertible()) return false;
  Eigen::VectorXd x = lu.solve(rhs);
  // One step of iterative refinement keeps lambda' w at working precision.
  x += lu.solve(rhs - sub * x);
  *out = x;
  return true;
}

LcpSolution assemble(const Eigen::MatrixXd& M, const Eigen::VectorXd& q,
                     const std::vector<int>& active,
                     const Eigen::VectorXd& lambda_active) {
  LcpSolution s;
  s.lambda = Eigen::VectorXd::Zero(q.size());
  for (int r = 0; r < static_cast<int>(active.size()); ++r)
    s.lambda(active[r]) = lambda_active(r);
  s.w = M * s.lambda + q;
  s.complementarity_residual = std::abs(s.lambda.dot(s.w));
  return s;
}

}  // namespace

LcpSolution solve(const LcpProblem& p) {
  check_problem(p);
  const int n = p.size();
  const double tol = 1e-12;

  std::vector<char> in_active(n, 0);
  std::uint64_t budget = std::uint64_t{1} << std::min(n, 20);

  for (std::uint64_t pivots = 0; pivots <= budget; ++pivots) {
    std::vector<int> active;
    for (int i = 0; i < n; ++i)
      if (in_active[i]) active.push_back(i);

    Eigen::VectorXd lambda_active(active.size());
    if (!active.empty()) {
      if (!solve_principal(p.M, p.q, active, &lambda_active))
        throw NoSolutionFound("singular principal block; M is likely not P");
    }
    LcpSolution s = assemble(p.M, p.q, active, lambda_active);

    int flip = -1;
    for (int i = 0; i < n; ++i) {
      const bool bad =
          in_active[i] ? (s.lambda(i) < -tol) : (s.w(i) < -tol);
      if (bad) {
        flip = i;
        break;
      }
    }
    if (flip < 0) {
      if (s.lambda.minCoeff() < -kLcpFeasTol || s.w.minCoeff() < -kLcpFeasTol ||
          s.complementarity_residual > kLcpCompTol)
        throw NoSolutionFound("pivoting converged outside tolerance");
      return s;
    }
    in_active[flip] = !in_active[flip];
  }
  throw NoSolutionFound("pivot budget exhausted; M is likely not P");
}

std::vector<LcpSolution> enumerate_solutions(const LcpProblem& p) {
  check_problem(p);
  const int n = p.size();
  if (n > 16) throw DimensionTooLarge("enumerate_solutions requires n <= 16");
  const double tol = 1e-9;

  std::vector<LcpSolution> found;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> active;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) active.push_back(i);

    Eigen::VectorXd lambda_active(active.size());
    if (!active.empty() &&
        !solve_principal(p.M, p.q, active, &lambda_active))
      continue;  // singular block: no isolated solution on this piece
    LcpSolution s = assemble(p.M, p.q, active, lambda_active);
    if (s.lambda.minCoeff() < -tol || s.w.minCoeff() < -tol) continue;

    bool duplicate = false;
    for (const auto& other : found)
      if ((other.lambda - s.lambda).lpNorm<Eigen::Infinity>() < 1e-8) {
        duplicate = true;
        break;
      }
    if (!duplicate) found.push_back(std::move(s));
  }
  return found;
}

bool is_p_matrix(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw DimensionMismatch("matrix must be square");
  const int n = static_cast<int>(M.rows());
  if (n > 16) throw DimensionTooLarge("is_p_matrix requires n <= 16");

  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) idx.push_back(i);
    const int m = static_cast<int>(idx.size());
    Eigen::MatrixXd sub(m, m);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < m; ++c) sub(r, c) = M(idx[r], idx[c]);
    double det = m == 1 ? sub(0, 0) : sub.determinant();
    if (!(det > 1e-12)) return false;
  }
  return true;
}

}  // namespace csteer
