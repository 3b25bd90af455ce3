#include "csteer/nlp.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace csteer {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

ScalarExpr ScalarExpr::constant_expr(double c) {
  ScalarExpr e;
  e.constant = c;
  return e;
}

ScalarExpr ScalarExpr::var(int index, double coeff) {
  ScalarExpr e;
  e.linear.emplace_back(index, coeff);
  return e;
}

ScalarExpr& ScalarExpr::add_constant(double c) {
  constant += c;
  return *this;
}

ScalarExpr& ScalarExpr::add_linear(int index, double coeff) {
  linear.emplace_back(index, coeff);
  return *this;
}

ScalarExpr& ScalarExpr::add_bilinear(int i, int j, double coeff) {
  bilinear.push_back({i, j, coeff});
  return *this;
}

ScalarExpr& ScalarExpr::operator+=(const ScalarExpr& other) {
  constant += other.constant;
  linear.insert(linear.end(), other.linear.begin(), other.linear.end());
  bilinear.insert(bilinear.end(), other.bilinear.begin(),
                  other.bilinear.end());
  return *this;
}

ScalarExpr& ScalarExpr::operator*=(double s) {
  constant *= s;
  for (auto& [i, c] : linear) c *= s;
  for (auto& t : bilinear) t.coeff *= s;
  return *this;
}

double ScalarExpr::eval(const Eigen::VectorXd& x) const {
  double v = constant;
  for (const auto& [i, c] : linear) v += c * x(i);
  for (const auto& t : bilinear) v += t.coeff * x(t.i) * x(t.j);
  return v;
}

void ScalarExpr::accumulate_gradient(const Eigen::VectorXd& x, double scale,
                                     Eigen::VectorXd& grad) const {
  for (const auto& [i, c] : linear) grad(i) += scale * c;
  for (const auto& t : bilinear) {
    grad(t.i) += scale * t.coeff * x(t.j);
    grad(t.j) += scale * t.coeff * x(t.i);
  }
}

int ScalarExpr::max_index() const {
  int m = -1;
  for (const auto& [i, c] : linear) m = std::max(m, i);
  for (const auto& t : bilinear) m = std::max({m, t.i, t.j});
  return m;
}

void NlpProblem::validate() const {
  if (n_vars < 1) throw DimensionMismatch("problem needs >= 1 variable");
  if (hessian.rows() != n_vars || hessian.cols() != n_vars)
    throw DimensionMismatch("objective hessian must be n_vars x n_vars");
  if (gradient.size() != n_vars)
    throw DimensionMismatch("objective gradient must have n_vars entries");
  Eigen::SparseMatrix<double> ht = hessian.transpose();
  Eigen::SparseMatrix<double> skew = hessian - ht;
  if (skew.norm() > 1e-9 * (1.0 + hessian.norm()))
    throw DimensionMismatch("objective hessian must be symmetric");
  if (lb.size() != 0 && lb.size() != n_vars)
    throw DimensionMismatch("lb must be empty or n_vars long");
  if (ub.size() != 0 && ub.size() != n_vars)
    throw DimensionMismatch("ub must be empty or n_vars long");
  for (int i = 0; i < lb.size() && i < ub.size(); ++i)
    if (lb(i) > ub(i)) throw DimensionMismatch("lb exceeds ub");
  auto check_expr = [&](const ScalarExpr& e) {
    if (e.max_index() >= n_vars)
      throw DimensionMismatch("expression references an unknown variable");
    for (const auto& [i, c] : e.linear)
      if (i < 0) throw DimensionMismatch("negative variable index");
    for (const auto& t : e.bilinear)
      if (t.i < 0 || t.j < 0)
        throw DimensionMismatch("negative variable index");
  };
  for (const auto& e : eq_constraints) check_expr(e);
  for (const auto& e : ineq_constraints) check_expr(e);
  for (const auto& [a, b] : complementarity_pairs) {
    check_expr(a);
    check_expr(b);
  }
  if (initial_point.size() != 0 && initial_point.size() != n_vars)
    throw DimensionMismatch("initial point must be empty or n_vars long");
}

double NlpProblem::objective(const Eigen::VectorXd& x) const {
  return 0.5 * x.dot(hessian * x) + gradient.dot(x) + objective_constant;
}

const char* to_string(NlpStatus s) {
  switch (s) {
    case NlpStatus::Optimal:
      return "Optimal";
    case NlpStatus::Infeasible:
      return "Infeasible";
    case NlpStatus::RestorationFailed:
      return "RestorationFailed";
    case NlpStatus::MaxIterations:
      return "MaxIterations";
  }
  return "Unknown";
}

namespace {

// One smooth inequality/equality row of the relaxed problem. sign*expr or
// the pair product a*b - margin, optionally with up to two extra elastic
// variables appended (used by the restoration problem).
struct Row {
  enum class Kind { Expr, Product };
  Kind kind = Kind::Expr;
  const ScalarExpr* expr = nullptr;
  double sign = 1.0;
  const ScalarExpr* a = nullptr;
  const ScalarExpr* b = nullptr;
  double margin = 0.0;  // product rows: a*b - margin <= 0
  int elastic[2] = {-1, -1};
  double elastic_coeff[2] = {0.0, 0.0};

  double eval(const Eigen::VectorXd& x) const {
    double v;
    if (kind == Kind::Expr) {
      v = sign * expr->eval(x);
    } else {
      v = a->eval(x) * b->eval(x) - margin;
    }
    for (int t = 0; t < 2; ++t)
      if (elastic[t] >= 0) v += elastic_coeff[t] * x(elastic[t]);
    return v;
  }

  void accumulate_gradient(const Eigen::VectorXd& x, double scale,
                           Eigen::VectorXd& grad) const {
    if (kind == Kind::Expr) {
      expr->accumulate_gradient(x, scale * sign, grad);
    } else {
      a->accumulate_gradient(x, scale * b->eval(x), grad);
      b->accumulate_gradient(x, scale * a->eval(x), grad);
    }
    for (int t = 0; t < 2; ++t)
      if (elastic[t] >= 0) grad(elastic[t]) += scale * elastic_coeff[t];
  }

  void support(std::vector<int>& out) const {
    auto from_expr = [&](const ScalarExpr& e) {
      for (const auto& [i, c] : e.linear) out.push_back(i);
      for (const auto& t : e.bilinear) {
        out.push_back(t.i);
        out.push_back(t.j);
      }
    };
    if (kind == Kind::Expr) {
      from_expr(*expr);
    } else {
      from_expr(*a);
      from_expr(*b);
    }
    for (int t = 0; t < 2; ++t)
      if (elastic[t] >= 0) out.push_back(elastic[t]);
  }

  // Exact second derivatives times scale, as symmetric triplets. Expression
  // rows have constant curvature from their bilinear terms; product rows add
  // a d2b + b d2a plus the cross term da db' + db da'. Elastic variables
  // enter linearly and carry no curvature.
  void accumulate_hessian(const Eigen::VectorXd& x, double scale,
                          std::vector<Eigen::Triplet<double>>& trips) const {
    auto expr_hess = [&trips](const ScalarExpr& e, double s) {
      for (const auto& t : e.bilinear) {
        trips.emplace_back(t.i, t.j, s * t.coeff);
        trips.emplace_back(t.j, t.i, s * t.coeff);
      }
    };
    if (kind == Kind::Expr) {
      expr_hess(*expr, scale * sign);
      return;
    }
    expr_hess(*a, scale * b->eval(x));
    expr_hess(*b, scale * a->eval(x));
    auto sparse_grad = [&x](const ScalarExpr& e,
                            std::vector<std::pair<int, double>>& out) {
      out.clear();
      for (const auto& [i, c] : e.linear) out.emplace_back(i, c);
      for (const auto& t : e.bilinear) {
        out.emplace_back(t.i, t.coeff * x(t.j));
        out.emplace_back(t.j, t.coeff * x(t.i));
      }
    };
    std::vector<std::pair<int, double>> ga, gb;
    sparse_grad(*a, ga);
    sparse_grad(*b, gb);
    for (const auto& [i, vi] : ga)
      for (const auto& [j, vj] : gb) {
        const double v = scale * vi * vj;
        trips.emplace_back(i, j, v);
        trips.emplace_back(j, i, v);
      }
  }
};

// The eps-relaxed smooth view: plain equalities plus inequality rows where
// each complementarity pair becomes (-a <= 0, -b <= 0, a*b - 0.9 eps <= 0).
// The product rows get a tighter per-row feasibility tolerance so finishing
// a homotopy stage certifies products <= eps.
struct RelaxedView {
  int n_vars = 0;
  std::vector<Row> eq;
  std::vector<Row> ineq;
  Eigen::VectorXd ineq_tol;  // per-row feasibility tolerance
  Eigen::VectorXd lb, ub;
  std::vector<ScalarExpr> owned;  // storage for synthesized rows

  // Objective: 1/2 x'Hx + c'x + k.
  const Eigen::SparseMatrix<double>* hess = nullptr;
  Eigen::SparseMatrix<double> own_hess;
  Eigen::VectorXd grad_lin;
  double obj_const = 0.0;

  double objective(const Eigen::VectorXd& x) const {
    return 0.5 * x.dot((*hess) * x) + grad_lin.dot(x) + obj_const;
  }
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const {
    return (*hess) * x + grad_lin;
  }
};

constexpr double kProductShrink = 0.9;

RelaxedView make_view(const NlpProblem& p, double eps, double tol_feas,
                      double product_shrink = 1.0, bool pin_fixed = false) {
  RelaxedView v;
  v.n_vars = p.n_vars;
  v.hess = &p.hessian;
  v.grad_lin = p.gradient;
  v.obj_const = p.objective_constant;
  v.lb = p.lb.size() ? p.lb : Eigen::VectorXd::Constant(p.n_vars, -kInf);
  v.ub = p.ub.size() ? p.ub : Eigen::VectorXd::Constant(p.n_vars, kInf);

  if (pin_fixed) {
    // lb == ub has no interior, so hand those variables to the equality block.
    std::vector<int> fixed;
    for (int i = 0; i < p.n_vars; ++i)
      if (std::isfinite(v.lb(i)) && std::isfinite(v.ub(i)) &&
          v.ub(i) - v.lb(i) <= 1e-12)
        fixed.push_back(i);
    v.owned.reserve(fixed.size());
    for (int i : fixed) {
      ScalarExpr e;
      e.add_linear(i, 1.0);
      e.add_constant(-0.5 * (v.lb(i) + v.ub(i)));
      v.owned.push_back(std::move(e));
      Row r;
      r.expr = &v.owned.back();
      v.eq.push_back(r);
      v.lb(i) = -kInf;
      v.ub(i) = kInf;
    }
  }

  for (const auto& e : p.eq_constraints) {
    Row r;
    r.expr = &e;
    v.eq.push_back(r);
  }
  std::vector<double> tols;
  for (const auto& e : p.ineq_constraints) {
    Row r;
    r.expr = &e;
    v.ineq.push_back(r);
    tols.push_back(tol_feas);
  }
  for (const auto& [a, b] : p.complementarity_pairs) {
    Row ra;
    ra.expr = &a;
    ra.sign = -1.0;
    v.ineq.push_back(ra);
    tols.push_back(tol_feas);
    Row rb;
    rb.expr = &b;
    rb.sign = -1.0;
    v.ineq.push_back(rb);
    tols.push_back(tol_feas);
    Row rp;
    rp.kind = Row::Kind::Product;
    rp.a = &a;
    rp.b = &b;
    rp.margin = product_shrink * eps;
    v.ineq.push_back(rp);
    // Allows products up to eps exactly, certifying the homotopy stage.
    tols.push_back(std::max(0.0, (1.0 - product_shrink)) * eps + 1e-12);
  }
  v.ineq_tol.resize(tols.size());
  for (size_t i = 0; i < tols.size(); ++i) v.ineq_tol(i) = tols[i];
  return v;
}

struct InnerState {
  Eigen::VectorXd x, s, y, zeta, zl, zu;
  double mu = 1e-1;
};

enum class InnerOutcome { Converged, NeedsRestoration, Stalled, Budget };

struct InnerResult {
  InnerOutcome outcome = InnerOutcome::Stalled;
  double kkt = kInf;
  double viol = kInf;
};

struct InnerParams {
  double tol_kkt = 1e-6;
  double tol_feas = 1e-6;
  double mu_init = 1e-1;
  // Minimum distance to a finite bound enforced on entry. Warm re-entries
  // use a tiny value so a converged active set is not disturbed.
  double interior_push = 1e-3;
  bool restoration_metric = false;  // stall on objective progress instead
  std::ofstream* log = nullptr;
  double log_eps = 0.0;
  int* log_counter = nullptr;
};

Eigen::VectorXd eval_rows(const std::vector<Row>& rows,
                          const Eigen::VectorXd& x) {
  Eigen::VectorXd v(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) v(i) = rows[i].eval(x);
  return v;
}

Eigen::SparseMatrix<double> jacobian(const std::vector<Row>& rows,
                                     const Eigen::VectorXd& x, int n) {
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd scratch = Eigen::VectorXd::Zero(n);
  std::vector<int> idx;
  for (size_t r = 0; r < rows.size(); ++r) {
    idx.clear();
    rows[r].support(idx);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    rows[r].accumulate_gradient(x, 1.0, scratch);
    for (int i : idx) {
      if (scratch(i) != 0.0) trip.emplace_back((int)r, i, scratch(i));
      scratch(i) = 0.0;
    }
  }
  Eigen::SparseMatrix<double> J(rows.size(), n);
  J.setFromTriplets(trip.begin(), trip.end());
  return J;
}

double primal_violation(const RelaxedView& v, const Eigen::VectorXd& e,
                        const Eigen::VectorXd& g) {
  double viol = 0.0;
  for (int i = 0; i < e.size(); ++i) viol = std::max(viol, std::abs(e(i)));
  for (int j = 0; j < g.size(); ++j) viol = std::max(viol, g(j));
  return viol;
}

// True when each row meets its own feasibility tolerance.
bool rows_feasible(const RelaxedView& v, const Eigen::VectorXd& e,
                   const Eigen::VectorXd& g, double tol_feas) {
  for (int i = 0; i < e.size(); ++i)
    if (std::abs(e(i)) > tol_feas) return false;
  for (int j = 0; j < g.size(); ++j)
    if (g(j) > v.ineq_tol(j)) return false;
  return true;
}

// Primal-dual interior-point loop with Gauss-Newton curvature, Levenberg
// damping, a fraction-to-boundary rule, and an l1 merit line search.
InnerResult ip_solve(const RelaxedView& v, InnerState& st, int& budget,
                     const InnerParams& prm) {
  const int n = v.n_vars;
  const int me = static_cast<int>(v.eq.size());
  const int mi = static_cast<int>(v.ineq.size());
  constexpr double kDualReg = 1e-8;
  constexpr double kPrimalReg = 1e-8;

  std::vector<int> fin_lb, fin_ub;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(v.lb(i))) fin_lb.push_back(i);
    if (std::isfinite(v.ub(i))) fin_ub.push_back(i);
  }

  // Strictly interior start for barrier terms.
  for (int i : fin_lb) {
    double push = std::isfinite(v.ub(i))
                      ? std::min(prm.interior_push, 0.25 * (v.ub(i) - v.lb(i)))
                      : prm.interior_push;
    st.x(i) = std::max(st.x(i), v.lb(i) + push);
  }
  for (int i : fin_ub) {
    double push = std::isfinite(v.lb(i))
                      ? std::min(prm.interior_push, 0.25 * (v.ub(i) - v.lb(i)))
                      : prm.interior_push;
    st.x(i) = std::min(st.x(i), v.ub(i) - push);
  }

  Eigen::VectorXd g = eval_rows(v.ineq, st.x);
  if (st.s.size() != mi) {
    st.s.resize(mi);
    for (int j = 0; j < mi; ++j) st.s(j) = std::max(1e-4, -g(j));
  }
  if (st.y.size() != me) st.y = Eigen::VectorXd::Zero(me);
  if (st.zeta.size() != mi) {
    st.zeta.resize(mi);
    for (int j = 0; j < mi; ++j)
      st.zeta(j) = std::clamp(st.mu / st.s(j), 1e-8, 1e4);
  }
  if (st.zl.size() != n) {
    st.zl = Eigen::VectorXd::Zero(n);
    for (int i : fin_lb)
      st.zl(i) = std::clamp(st.mu / (st.x(i) - v.lb(i)), 1e-8, 1e4);
  }
  if (st.zu.size() != n) {
    st.zu = Eigen::VectorXd::Zero(n);
    for (int i : fin_ub)
      st.zu(i) = std::clamp(st.mu / (v.ub(i) - st.x(i)), 1e-8, 1e4);
  }
  st.mu = prm.mu_init;

  double nu = 0.0;  // Levenberg damping
  double rho = 1.0;
  double best_metric = kInf;
  int stall_count = 0;
  double prev_alpha = 0.0;  // last accepted step, for the log only
  char prev_kind = '-';     // m merit, r residual, f failed
  InnerResult res;

  auto stationarity = [&](const Eigen::VectorXd& grad_f,
                          const Eigen::SparseMatrix<double>& Je,
                          const Eigen::SparseMatrix<double>& Jg) {
    Eigen::VectorXd r = grad_f - st.zl + st.zu;
    if (me) r += Je.transpose() * st.y;
    if (mi) r += Jg.transpose() * st.zeta;
    return r;
  };

  for (;;) {
    if (budget <= 0) {
      res.outcome = InnerOutcome::Budget;
      return res;
    }
    --budget;

    Eigen::VectorXd e = eval_rows(v.eq, st.x);
    g = eval_rows(v.ineq, st.x);
    Eigen::SparseMatrix<double> Je = jacobian(v.eq, st.x, n);
    Eigen::SparseMatrix<double> Jg = jacobian(v.ineq, st.x, n);
    Eigen::VectorXd grad_f = v.objective_gradient(st.x);
    Eigen::VectorXd r_stat = stationarity(grad_f, Je, Jg);

    // Unrelaxed optimality measures (mu = 0).
    double comp0 = 0.0;
    for (int j = 0; j < mi; ++j)
      comp0 = std::max(comp0, std::abs(st.s(j) * st.zeta(j)));
    for (int i : fin_lb)
      comp0 = std::max(comp0, std::abs((st.x(i) - v.lb(i)) * st.zl(i)));
    for (int i : fin_ub)
      comp0 = std::max(comp0, std::abs((v.ub(i) - st.x(i)) * st.zu(i)));
    const double dual_scale =
        1.0 + (st.y.size() ? st.y.cwiseAbs().maxCoeff() : 0.0) +
        (st.zeta.size() ? st.zeta.cwiseAbs().maxCoeff() : 0.0);
    const double kkt0 =
        std::max(r_stat.cwiseAbs().maxCoeff() / dual_scale, comp0);
    const double viol = primal_violation(v, e, g);

    res.kkt = kkt0;
    res.viol = viol;
    if (prm.log && prm.log_counter) {
      *prm.log << ++*prm.log_counter << ',' << prm.log_eps << ','
               << v.objective(st.x) << ',' << viol << ',' << kkt0 << ','
               << st.mu << ',' << nu << ',' << prev_alpha << ',' << prev_kind
               << '\n';
    }

    if (kkt0 <= prm.tol_kkt && rows_feasible(v, e, g, prm.tol_feas)) {
      res.outcome = InnerOutcome::Converged;
      return res;
    }

    // Stall detection. The restoration problem tracks its own objective;
    // the main loop tracks optimality plus violation.
    const double metric =
        prm.restoration_metric ? v.objective(st.x) : kkt0 + viol;
    const double need = prm.restoration_metric ? 1e-10 : 1e-3;
    if (metric < best_metric * (1.0 - need) || best_metric == kInf) {
      best_metric = std::min(best_metric, metric);
      stall_count = 0;
    } else if (++stall_count >= 30) {
      res.outcome = prm.restoration_metric ? InnerOutcome::Stalled
                                           : InnerOutcome::NeedsRestoration;
      return res;
    }

    // Barrier parameter update once the mu-system is roughly solved.
    double mu_err = r_stat.cwiseAbs().maxCoeff() / dual_scale;
    mu_err = std::max(mu_err, viol);
    for (int j = 0; j < mi; ++j)
      mu_err = std::max(mu_err, std::abs(st.s(j) * st.zeta(j) - st.mu));
    for (int i : fin_lb)
      mu_err =
          std::max(mu_err, std::abs((st.x(i) - v.lb(i)) * st.zl(i) - st.mu));
    for (int i : fin_ub)
      mu_err =
          std::max(mu_err, std::abs((v.ub(i) - st.x(i)) * st.zu(i) - st.mu));
    if (mu_err <= 10.0 * st.mu)
      st.mu = std::max(1e-11, std::min(0.2 * st.mu, std::pow(st.mu, 1.5)));

    // Assemble and solve the regularized primal-dual KKT system over
    // (dx, ds, dy, dzeta); bound duals are recovered afterwards.
    Eigen::VectorXd sigma_x = Eigen::VectorXd::Zero(n);
    for (int i : fin_lb) sigma_x(i) += st.zl(i) / (st.x(i) - v.lb(i));
    for (int i : fin_ub) sigma_x(i) += st.zu(i) / (v.ub(i) - st.x(i));

    Eigen::VectorXd rhs(n + mi + me + mi);
    rhs.segment(0, n) = -r_stat;
    // Centering residuals of the eliminated bound duals.
    for (int i : fin_lb)
      rhs(i) += st.mu / (st.x(i) - v.lb(i)) - st.zl(i);
    for (int i : fin_ub)
      rhs(i) -= st.mu / (v.ub(i) - st.x(i)) - st.zu(i);
    for (int j = 0; j < mi; ++j)
      rhs(n + j) = -(st.zeta(j) - st.mu / st.s(j));
    rhs.segment(n + mi, me) = -e;
    rhs.segment(n + mi + me, mi) = -(g + st.s);

    // Exact Lagrangian curvature: the objective Hessian plus the multiplier
    // weighted second derivatives of every constraint row.
    std::vector<Eigen::Triplet<double>> curvature;
    curvature.reserve(v.hess->nonZeros());
    for (int k = 0; k < v.hess->outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(*v.hess, k); it; ++it)
        curvature.emplace_back(it.row(), it.col(), it.value());
    for (int i = 0; i < me; ++i)
      if (st.y(i) != 0.0) v.eq[i].accumulate_hessian(st.x, st.y(i), curvature);
    for (int j = 0; j < mi; ++j)
      if (st.zeta(j) != 0.0)
        v.ineq[j].accumulate_hessian(st.x, st.zeta(j), curvature);

    Eigen::VectorXd step;
    bool solved = false;
    Eigen::SparseMatrix<double> kkt(n + mi + me + mi, n + mi + me + mi);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    for (int attempt = 0; attempt < 10 && !solved; ++attempt) {
      std::vector<Eigen::Triplet<double>> trip = curvature;
      trip.reserve(curvature.size() +
                   4 * (Je.nonZeros() + Jg.nonZeros()) + 2 * n + 3 * mi + me);
      for (int i = 0; i < n; ++i)
        trip.emplace_back(i, i, sigma_x(i) + nu + kPrimalReg);
      for (int j = 0; j < mi; ++j)
        trip.emplace_back(n + j, n + j,
                          st.zeta(j) / st.s(j) + kPrimalReg);
      for (int k = 0; k < Je.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(Je, k); it; ++it) {
          trip.emplace_back(n + mi + it.row(), it.col(), it.value());
          trip.emplace_back(it.col(), n + mi + it.row(), it.value());
        }
      for (int i = 0; i < me; ++i)
        trip.emplace_back(n + mi + i, n + mi + i, -kDualReg);
      for (int k = 0; k < Jg.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(Jg, k); it; ++it) {
          trip.emplace_back(n + mi + me + it.row(), it.col(), it.value());
          trip.emplace_back(it.col(), n + mi + me + it.row(), it.value());
        }
      for (int j = 0; j < mi; ++j) {
        trip.emplace_back(n + mi + me + j, n + j, 1.0);
        trip.emplace_back(n + j, n + mi + me + j, 1.0);
        trip.emplace_back(n + mi + me + j, n + mi + me + j, -kDualReg);
      }
      kkt.setFromTriplets(trip.begin(), trip.end());
      ldlt.compute(kkt);
      if (ldlt.info() == Eigen::Success) {
        // The saddle system must have exactly me + mi negative pivots;
        // anything else means the damped Lagrangian Hessian is not yet
        // positive definite on the primal block.
        const auto& dvec = ldlt.vectorD();
        int neg = 0;
        bool degenerate = false;
        for (int ii = 0; ii < dvec.size(); ++ii) {
          if (dvec(ii) < 0.0) ++neg;
          if (dvec(ii) == 0.0 || !std::isfinite(dvec(ii))) degenerate = true;
        }
        if (neg == me + mi && !degenerate) {
          step = ldlt.solve(rhs);
          step += ldlt.solve(rhs - kkt * step);  // one refinement pass
          if (step.allFinite()) {
            solved = true;
            break;
          }
        }
      }
      nu = (nu == 0.0) ? 1e-4 : nu * 10.0;
      if (nu > 1e8) break;
    }
    if (!solved) {
      res.outcome = prm.restoration_metric ? InnerOutcome::Stalled
                                           : InnerOutcome::NeedsRestoration;
      return res;
    }

    const Eigen::VectorXd dx = step.segment(0, n);
    const Eigen::VectorXd ds = step.segment(n, mi);
    const Eigen::VectorXd dy = step.segment(n + mi, me);
    const Eigen::VectorXd dzeta = step.segment(n + mi + me, mi);
    Eigen::VectorXd dzl = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dzu = Eigen::VectorXd::Zero(n);
    for (int i : fin_lb)
      dzl(i) = st.mu / (st.x(i) - v.lb(i)) - st.zl(i) -
               st.zl(i) / (st.x(i) - v.lb(i)) * dx(i);
    for (int i : fin_ub)
      dzu(i) = st.mu / (v.ub(i) - st.x(i)) - st.zu(i) +
               st.zu(i) / (v.ub(i) - st.x(i)) * dx(i);

    // Fraction-to-boundary limits, looser as the barrier parameter falls.
    const double tau = std::max(0.995, 1.0 - 10.0 * st.mu);
    double alpha_p = 1.0, alpha_d = 1.0;
    for (int j = 0; j < mi; ++j) {
      if (ds(j) < 0.0) alpha_p = std::min(alpha_p, -tau * st.s(j) / ds(j));
      if (dzeta(j) < 0.0)
        alpha_d = std::min(alpha_d, -tau * st.zeta(j) / dzeta(j));
    }
    for (int i : fin_lb) {
      if (dx(i) < 0.0)
        alpha_p = std::min(alpha_p, -tau * (st.x(i) - v.lb(i)) / dx(i));
      if (dzl(i) < 0.0) alpha_d = std::min(alpha_d, -tau * st.zl(i) / dzl(i));
    }
    for (int i : fin_ub) {
      if (dx(i) > 0.0)
        alpha_p = std::min(alpha_p, tau * (v.ub(i) - st.x(i)) / dx(i));
      if (dzu(i) < 0.0) alpha_d = std::min(alpha_d, -tau * st.zu(i) / dzu(i));
    }

    // l1 merit with Armijo backtracking.
    rho = std::max(rho, 1.2 * dual_scale);
    auto merit = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& ss) {
      double m = v.objective(xx);
      for (int j = 0; j < mi; ++j) m -= st.mu * std::log(ss(j));
      for (int i : fin_lb) m -= st.mu * std::log(xx(i) - v.lb(i));
      for (int i : fin_ub) m -= st.mu * std::log(v.ub(i) - xx(i));
      const Eigen::VectorXd ee = eval_rows(v.eq, xx);
      const Eigen::VectorXd gg = eval_rows(v.ineq, xx);
      m += rho * (ee.cwiseAbs().sum() + (gg + ss).cwiseAbs().sum());
      return m;
    };
    const double c_l1 = e.cwiseAbs().sum() + (g + st.s).cwiseAbs().sum();
    double dderiv = grad_f.dot(dx) - rho * c_l1;
    for (int j = 0; j < mi; ++j) dderiv -= st.mu * ds(j) / st.s(j);
    for (int i : fin_lb) dderiv -= st.mu * dx(i) / (st.x(i) - v.lb(i));
    for (int i : fin_ub) dderiv += st.mu * dx(i) / (v.ub(i) - st.x(i));

    const Eigen::VectorXd x_pre = st.x;
    const Eigen::VectorXd s_pre = st.s;
    const double phi0 = merit(st.x, st.s);
    double alpha = alpha_p;
    bool accepted = false;
    bool soc_step = false;
    for (int t = 0; t < 40; ++t) {
      const Eigen::VectorXd xn = st.x + alpha * dx;
      const Eigen::VectorXd sn = st.s + alpha * ds;
      if (merit(xn, sn) <= phi0 + 1e-4 * alpha * std::min(dderiv, 0.0)) {
        st.x = xn;
        st.s = sn;
        accepted = true;
        break;
      }
      // Second-order correction on the first rejection. Constraint rows are
      // curved, so the full trial point carries a violation quadratic in the
      // step even when the tangential direction is good. One extra solve of
      // the factored system against the trial residuals restores it.
      if (t == 0 && me + mi > 0) {
        Eigen::VectorXd rhs2 = Eigen::VectorXd::Zero(n + mi + me + mi);
        rhs2.segment(n + mi, me) = -eval_rows(v.eq, xn);
        rhs2.segment(n + mi + me, mi) = -(eval_rows(v.ineq, xn) + sn);
        Eigen::VectorXd cor = ldlt.solve(rhs2);
        cor += ldlt.solve(rhs2 - kkt * cor);
        if (cor.allFinite()) {
          const Eigen::VectorXd dx2 = cor.segment(0, n);
          const Eigen::VectorXd ds2 = cor.segment(n, mi);
          double a2 = 1.0;
          for (int j = 0; j < mi; ++j)
            if (ds2(j) < 0.0) a2 = std::min(a2, -tau * sn(j) / ds2(j));
          for (int i : fin_lb)
            if (dx2(i) < 0.0)
              a2 = std::min(a2, -tau * (xn(i) - v.lb(i)) / dx2(i));
          for (int i : fin_ub)
            if (dx2(i) > 0.0)
              a2 = std::min(a2, tau * (v.ub(i) - xn(i)) / dx2(i));
          const Eigen::VectorXd xs = xn + a2 * dx2;
          const Eigen::VectorXd ss = sn + a2 * ds2;
          if (merit(xs, ss) <= phi0 + 1e-4 * alpha * std::min(dderiv, 0.0)) {
            st.x = xs;
            st.s = ss;
            accepted = true;
            soc_step = true;
            break;
          }
        }
      }
      alpha *= 0.5;
      if (alpha < 1e-12) break;
    }

    // Near a centered point the l1 barrier merit can disagree with the
    // primal-dual direction and force creeping steps. A full step that
    // contracts the perturbed KKT residual is accepted regardless.
    const double alpha_full = std::min(alpha_p, alpha_d);
    bool residual_step = false;
    if (!accepted || alpha < 0.1 * alpha_full) {
      auto residual = [&](const Eigen::VectorXd& xx, const Eigen::VectorXd& ss,
                          const Eigen::VectorXd& yy, const Eigen::VectorXd& zz,
                          const Eigen::VectorXd& ll,
                          const Eigen::VectorXd& uu) {
        const Eigen::SparseMatrix<double> JJe = jacobian(v.eq, xx, n);
        const Eigen::SparseMatrix<double> JJg = jacobian(v.ineq, xx, n);
        Eigen::VectorXd r = v.objective_gradient(xx) - ll + uu;
        if (me) r += JJe.transpose() * yy;
        if (mi) r += JJg.transpose() * zz;
        double err = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
        const Eigen::VectorXd ee = eval_rows(v.eq, xx);
        const Eigen::VectorXd gg = eval_rows(v.ineq, xx);
        if (me) err = std::max(err, ee.cwiseAbs().maxCoeff());
        for (int j = 0; j < mi; ++j) {
          err = std::max(err, std::abs(gg(j) + ss(j)));
          err = std::max(err, std::abs(ss(j) * zz(j) - st.mu));
        }
        for (int i : fin_lb)
          err = std::max(err, std::abs((xx(i) - v.lb(i)) * ll(i) - st.mu));
        for (int i : fin_ub)
          err = std::max(err, std::abs((v.ub(i) - xx(i)) * uu(i) - st.mu));
        return err;
      };
      const double err0 =
          residual(x_pre, s_pre, st.y, st.zeta, st.zl, st.zu);
      const Eigen::VectorXd xn = x_pre + alpha_full * dx;
      const Eigen::VectorXd sn = s_pre + alpha_full * ds;
      const Eigen::VectorXd yn = st.y + alpha_full * dy;
      const Eigen::VectorXd zn = st.zeta + alpha_full * dzeta;
      const Eigen::VectorXd ln = st.zl + alpha_full * dzl;
      const Eigen::VectorXd un = st.zu + alpha_full * dzu;
      if (residual(xn, sn, yn, zn, ln, un) <=
          (1.0 - 1e-4 * alpha_full) * err0) {
        st.x = xn;
        st.s = sn;
        st.y = yn;
        st.zeta = zn;
        st.zl = ln;
        st.zu = un;
        accepted = true;
        residual_step = true;
        alpha = alpha_full;
      }
    }
    if (std::getenv("CSTEER_NLP_TRACE") && (!accepted || alpha < 0.05)) {
      int imax = 0;
      r_stat.cwiseAbs().maxCoeff(&imax);
      const Eigen::VectorXd xf = x_pre + std::min(alpha_p, alpha_d) * dx;
      const Eigen::VectorXd sf = s_pre + std::min(alpha_p, alpha_d) * ds;
      std::fprintf(stderr,
                   "it=%d mu=%.2e nu=%.2e ap=%.3f ad=%.3f a=%.2e dd=%+.3e "
                   "phi0=%.8f phiF=%.8f rstat_max=%.2e@%d |dx|=%.2e rho=%.1e\n",
                   prm.log_counter ? *prm.log_counter : -1, st.mu, nu, alpha_p,
                   alpha_d,
                   accepted ? alpha : 0.0, dderiv, phi0, merit(xf, sf),
                   r_stat.cwiseAbs().maxCoeff(), imax,
                   dx.cwiseAbs().maxCoeff(), rho);
    }
    if (!accepted) {
      prev_alpha = 0.0;
      prev_kind = 'f';
      if (nu < 1e6) {
        nu = (nu == 0.0) ? 1e-4 : nu * 10.0;
        continue;  // steeper damping, try again from the same point
      }
      res.outcome = prm.restoration_metric ? InnerOutcome::Stalled
                                           : InnerOutcome::NeedsRestoration;
      return res;
    }
    // Damping tracks step quality. A near-full step means the quadratic
    // model held, so damping decays. A step the merit search cut to a
    // sliver means the model lied at the attempted scale, which happens on
    // near-singular KKT blocks whose inertia is still acceptable, so the
    // damping escalates to shrink the next step.
    if (alpha >= 0.1 * alpha_full) {
      nu = std::max(0.0, nu * 0.25);
    } else {
      nu = std::min(1e8, std::max(nu * 10.0, 1e-4));
    }
    prev_alpha = alpha;
    prev_kind = residual_step ? 'r' : (soc_step ? 's' : 'm');

    if (!residual_step) {
      st.y += alpha_d * dy;
      st.zeta += alpha_d * dzeta;
      st.zl += alpha_d * dzl;
      st.zu += alpha_d * dzu;
    }
    for (int j = 0; j < mi; ++j) st.zeta(j) = std::clamp(st.zeta(j), 0.0, 1e12);
    for (int i : fin_lb) st.zl(i) = std::clamp(st.zl(i), 1e-14, 1e12);
    for (int i : fin_ub) st.zu(i) = std::clamp(st.zu(i), 1e-14, 1e12);
  }
}

// Restoration: minimize the l1 violation of `v`'s constraints with elastic
// variables, keeping x within its bounds, plus a small proximal term.
struct ElasticProblem {
  RelaxedView view;
  int n_orig = 0;
};

ElasticProblem make_elastic(const RelaxedView& v, const Eigen::VectorXd& x) {
  ElasticProblem ep;
  ep.n_orig = v.n_vars;
  const int me = static_cast<int>(v.eq.size());
  const int mi = static_cast<int>(v.ineq.size());
  const int n = v.n_vars + 2 * me + mi;
  constexpr double kProx = 1e-4;

  RelaxedView& w = ep.view;
  w.n_vars = n;
  w.eq = v.eq;
  w.ineq = v.ineq;
  w.ineq_tol = v.ineq_tol;
  w.lb = Eigen::VectorXd::Constant(n, -kInf);
  w.ub = Eigen::VectorXd::Constant(n, kInf);
  w.lb.head(v.n_vars) = v.lb;
  w.ub.head(v.n_vars) = v.ub;

  std::vector<Eigen::Triplet<double>> htrip;
  for (int i = 0; i < v.n_vars; ++i) htrip.emplace_back(i, i, kProx);
  w.grad_lin = Eigen::VectorXd::Zero(n);
  w.grad_lin.head(v.n_vars) = -kProx * x;
  w.obj_const = 0.5 * kProx * x.squaredNorm();

  for (int i = 0; i < me; ++i) {
    // e_i(x) - p_i + q_i = 0 with p, q >= 0 entering the objective.
    const int p_idx = v.n_vars + 2 * i;
    const int q_idx = v.n_vars + 2 * i + 1;
    w.lb(p_idx) = 0.0;
    w.lb(q_idx) = 0.0;
    w.grad_lin(p_idx) = 1.0;
    w.grad_lin(q_idx) = 1.0;
    w.eq[i].elastic[0] = p_idx;
    w.eq[i].elastic_coeff[0] = -1.0;
    w.eq[i].elastic[1] = q_idx;
    w.eq[i].elastic_coeff[1] = 1.0;
  }
  for (int j = 0; j < mi; ++j) {
    // g_j(x) - r_j <= 0 with r >= 0 entering the objective.
    const int r_idx = v.n_vars + 2 * me + j;
    w.lb(r_idx) = 0.0;
    w.grad_lin(r_idx) = 1.0;
    w.ineq[j].elastic[0] = r_idx;
    w.ineq[j].elastic_coeff[0] = -1.0;
  }
  w.own_hess.resize(n, n);
  w.own_hess.setFromTriplets(htrip.begin(), htrip.end());
  w.hess = &w.own_hess;
  return ep;
}

}  // namespace

SolveReport solve(const NlpProblem& p, const SolverOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  p.validate();

  std::ofstream log;
  int log_counter = 0;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path);
    log << "iteration,eps_c,objective,feasibility,kkt,mu,nu,alpha,kind\n";
  }

  std::vector<double> schedule;
  if (p.complementarity_pairs.empty()) {
    schedule.push_back(0.0);
  } else {
    for (double e = opts.eps_start; e >= opts.eps_end * (1.0 - 1e-12);
         e *= opts.eps_factor)
      schedule.push_back(e);
    if (schedule.empty() || schedule.back() > opts.eps_end * (1.0 + 1e-9))
      schedule.push_back(opts.eps_end);
  }

  InnerState st;
  st.x = p.initial_point.size() ? p.initial_point
                                : Eigen::VectorXd::Zero(p.n_vars);
  int budget = opts.max_total_iterations;
  double last_kkt = kInf;

  SolveReport report;
  auto finish = [&](NlpStatus status) {
    report.status = status;
    report.x_star = st.x;
    report.objective_value = p.objective(st.x);
    report.kkt_residual = last_kkt;
    report.iterations = opts.max_total_iterations - budget;
    double viol = 0.0;
    for (const auto& e : p.eq_constraints)
      viol = std::max(viol, std::abs(e.eval(st.x)));
    for (const auto& e : p.ineq_constraints)
      viol = std::max(viol, e.eval(st.x));
    for (int i = 0; i < p.lb.size(); ++i)
      viol = std::max(viol, p.lb(i) - st.x(i));
    for (int i = 0; i < p.ub.size(); ++i)
      viol = std::max(viol, st.x(i) - p.ub(i));
    double comp = 0.0;
    for (const auto& [a, b] : p.complementarity_pairs) {
      const double av = a.eval(st.x), bv = b.eval(st.x);
      viol = std::max({viol, -av, -bv});
      comp = std::max(comp, std::max(0.0, av * bv));
    }
    report.max_constraint_violation = std::max(0.0, viol);
    report.max_complementarity_residual = comp;
    report.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return report;
  };

  for (size_t stage = 0; stage < schedule.size(); ++stage) {
    const bool last = (stage + 1 == schedule.size());
    RelaxedView view =
        make_view(p, schedule[stage], opts.tol_feas, kProductShrink, true);

    InnerParams prm;
    prm.tol_kkt = last ? opts.tol_kkt : std::max(opts.tol_kkt, 1e-4);
    prm.tol_feas = opts.tol_feas;
    prm.log = log.is_open() ? &log : nullptr;
    prm.log_eps = schedule[stage];
    prm.log_counter = &log_counter;

    // The whole state carries across stages; only product margins move.
    // A warm stage restarts the barrier near the carried complementarity
    // and must not displace the converged active set on entry.
    if (st.s.size() == 0) {
      prm.mu_init = 1e-1;
    } else {
      const double comp_avg = st.s.cwiseProduct(st.zeta).cwiseAbs().mean();
      prm.mu_init = std::clamp(10.0 * comp_avg, 1e-9, 1e-4);
      prm.interior_push = 1e-6;
    }

    int restorations = 0;
    for (;;) {
      InnerResult r = ip_solve(view, st, budget, prm);
      last_kkt = r.kkt;
      if (r.outcome == InnerOutcome::Converged) break;
      if (r.outcome == InnerOutcome::Budget)
        return finish(NlpStatus::MaxIterations);
      // Stalled main loop: run elastic restoration.
      if (++restorations > 3) return finish(NlpStatus::RestorationFailed);
      ElasticProblem ep = make_elastic(view, st.x);
      InnerState rst;
      rst.x = Eigen::VectorXd::Zero(ep.view.n_vars);
      rst.x.head(p.n_vars) = st.x;
      {
        const Eigen::VectorXd e0 = eval_rows(view.eq, st.x);
        const Eigen::VectorXd g0 = eval_rows(view.ineq, st.x);
        for (int i = 0; i < e0.size(); ++i) {
          rst.x(p.n_vars + 2 * i) = std::max(1e-4, e0(i));
          rst.x(p.n_vars + 2 * i + 1) = std::max(1e-4, -e0(i));
        }
        for (int j = 0; j < g0.size(); ++j)
          rst.x(p.n_vars + 2 * e0.size() + j) = std::max(1e-4, g0(j));
      }
      InnerParams rprm;
      rprm.tol_kkt = 1e-8;
      rprm.tol_feas = opts.tol_feas;
      rprm.mu_init = 1e-2;
      rprm.restoration_metric = true;
      rprm.log = prm.log;
      rprm.log_eps = prm.log_eps;
      rprm.log_counter = prm.log_counter;
      // Restoration only needs to recover feasibility; a bounded slice keeps
      // a slowly converging elastic phase from draining the whole budget.
      int slice = std::min(budget, 400);
      const int slice_start = slice;
      InnerResult rr = ip_solve(ep.view, rst, slice, rprm);
      budget -= slice_start - slice;
      st.x = rst.x.head(p.n_vars);
      if (rr.outcome == InnerOutcome::Budget && budget <= 0)
        return finish(NlpStatus::MaxIterations);
      const Eigen::VectorXd e1 = eval_rows(view.eq, st.x);
      const Eigen::VectorXd g1 = eval_rows(view.ineq, st.x);
      if (primal_violation(view, e1, g1) > opts.tol_feas) {
        // A converged elastic solve whose violation stays positive is a
        // certificate of local infeasibility.
        if (rr.outcome == InnerOutcome::Converged)
          return finish(NlpStatus::Infeasible);
        return finish(NlpStatus::RestorationFailed);
      }
      // Feasible again: retry the stage from the restored point, keeping
      // the carried duals.
    }
  }

  SolveReport rep = finish(NlpStatus::Optimal);
  // The Optimal contract is verified on the exact returned point.
  if (rep.max_constraint_violation > opts.tol_feas ||
      rep.max_complementarity_residual > opts.tol_comp)
    rep.status = NlpStatus::MaxIterations;
  return rep;
}

KktComponents kkt_components(const NlpProblem& p, double eps_c,
                             const Eigen::VectorXd& x, const Multipliers& m) {
  p.validate();
  if (x.size() != p.n_vars)
    throw DimensionMismatch("point must have n_vars entries");
  RelaxedView view = make_view(p, eps_c, 1e-6);
  const int me = static_cast<int>(view.eq.size());
  const int mi = static_cast<int>(view.ineq.size());
  if (m.eq.size() != me || m.ineq.size() != mi)
    throw DimensionMismatch("multiplier blocks must match constraint counts");
  if ((m.lower.size() != 0 && m.lower.size() != p.n_vars) ||
      (m.upper.size() != 0 && m.upper.size() != p.n_vars))
    throw DimensionMismatch("bound duals must be empty or n_vars long");

  Eigen::VectorXd grad = view.objective_gradient(x);
  for (int i = 0; i < me; ++i)
    view.eq[i].accumulate_gradient(x, m.eq(i), grad);
  for (int j = 0; j < mi; ++j)
    view.ineq[j].accumulate_gradient(x, m.ineq(j), grad);
  if (m.lower.size()) grad -= m.lower;
  if (m.upper.size()) grad += m.upper;

  KktComponents out;
  out.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;

  const Eigen::VectorXd e = eval_rows(view.eq, x);
  const Eigen::VectorXd g = eval_rows(view.ineq, x);
  out.feasibility = primal_violation(view, e, g);
  for (int i = 0; i < p.lb.size(); ++i)
    out.feasibility = std::max(out.feasibility, p.lb(i) - x(i));
  for (int i = 0; i < p.ub.size(); ++i)
    out.feasibility = std::max(out.feasibility, x(i) - p.ub(i));

  for (int j = 0; j < mi; ++j)
    out.complementarity =
        std::max(out.complementarity, std::abs(m.ineq(j) * g(j)));
  for (int i = 0; i < m.lower.size(); ++i)
    if (std::isfinite(view.lb(i)))
      out.complementarity = std::max(
          out.complementarity, std::abs(m.lower(i) * (x(i) - view.lb(i))));
  for (int i = 0; i < m.upper.size(); ++i)
    if (std::isfinite(view.ub(i)))
      out.complementarity = std::max(
          out.complementarity, std::abs(m.upper(i) * (view.ub(i) - x(i))));
  return out;
}

double kkt_residual(const NlpProblem& p, double eps_c,
                    const Eigen::VectorXd& x, const Multipliers& m) {
  const KktComponents c = kkt_components(p, eps_c, x, m);
  return std::max({c.stationarity, c.feasibility, c.complementarity});
}

}  // namespace csteer
