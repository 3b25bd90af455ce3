#include "csteer/steering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "csteer/errors.hpp"

namespace csteer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGainRidge = 1e-8;

void check_symmetric(const Eigen::MatrixXd& m, const char* name) {
  if ((m - m.transpose()).norm() > 1e-9 * (1.0 + m.norm()))
    throw ConfigError(std::string(name) + " must be symmetric");
}

}  // namespace

void SteeringConfig::validate(const Dims& dims) const {
  if (Q.rows() != dims.n_x || Q.cols() != dims.n_x)
    throw DimensionMismatch("Q must be n_x x n_x");
  if (R.rows() != dims.n_u || R.cols() != dims.n_u)
    throw DimensionMismatch("R must be n_u x n_u");
  if (x_d.size() != dims.n_x)
    throw DimensionMismatch("x_d must have n_x entries");
  check_symmetric(Q, "Q");
  check_symmetric(R, "R");
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    const double top = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-9 * top)
      throw ConfigError("Q must be positive semidefinite");
  }
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw ConfigError("R must be positive definite");
  }
  if (!(Delta >= 0.0 && Delta <= 1.0))
    throw ConfigError("Delta must lie in [0, 1]");
  if (!(epsilon_boundary >= 0.0))
    throw ConfigError("epsilon_boundary must be nonnegative");
  for (const auto& hs : control_polytope)
    if (hs.c.size() != dims.n_u)
      throw DimensionMismatch("control halfspace must have n_u entries");
  safe.validate(dims);
}

int MpccLayout::v_index(int k, int a) const { return k * dims.n_u + a; }

int MpccLayout::k_index(int k, int a, int b) const {
  return v_count + (k * dims.n_u + a) * dims.n_x + b;
}

int MpccLayout::l_index(int k, int a, int c) const {
  return v_count + k_count + (k * dims.n_u + a) * dims.n_c + c;
}

int MpccLayout::particle_base(int i) const {
  return shared_count + i * per_particle;
}

int MpccLayout::x_index(int i, int k, int a) const {
  return particle_base(i) + (k - 1) * dims.n_x + a;
}

int MpccLayout::lambda_index(int i, int k, int c) const {
  return particle_base(i) + dims.horizon * dims.n_x + k * dims.n_c + c;
}

int MpccLayout::t_index(int i) const {
  return particle_base(i) + dims.horizon * (dims.n_x + dims.n_c);
}

int MpccLayout::z_index(int i) const { return t_index(i) + 1; }

int MpccLayout::w_plus_index(int i) const { return t_index(i) + 2; }

int MpccLayout::w_minus_index(int i) const { return t_index(i) + 3; }

MpccLayout make_layout(const Dims& dims, int n_particles, PolicyMode mode) {
  if (n_particles < 1) throw EmptyParticles("layout needs >= 1 particle");
  MpccLayout lay;
  lay.dims = dims;
  lay.n_particles = n_particles;
  lay.mode = mode;
  const int t = dims.horizon;
  lay.v_count = t * dims.n_u;
  lay.k_count = mode == PolicyMode::OpenLoop ? 0 : t * dims.n_u * dims.n_x;
  lay.l_count =
      mode == PolicyMode::ContactAware ? t * dims.n_u * dims.n_c : 0;
  lay.shared_count = lay.v_count + lay.k_count + lay.l_count;
  lay.per_particle = t * (dims.n_x + dims.n_c) + 4;
  lay.n_vars = lay.shared_count + n_particles * lay.per_particle;
  return lay;
}

NlpProblem build_mpcc(const UncertainLcs& sys,
                      const std::vector<Particle>& particles,
                      const SteeringConfig& cfg) {
  sys.validate();
  if (particles.empty()) throw EmptyParticles("build_mpcc needs particles");
  cfg.validate(sys.dims);

  const Dims& d = sys.dims;
  const int n = static_cast<int>(particles.size());
  const int t_hor = d.horizon;
  const double w_mean = 1.0 / n;
  for (const Particle& pt : particles) {
    if (pt.x0.size() != d.n_x || pt.w.rows() != t_hor ||
        pt.w.cols() != d.n_x || pt.l.rows() != t_hor || pt.l.cols() != d.n_c)
      throw DimensionMismatch("particle does not match the system dims");
  }

  const MpccLayout lay = make_layout(d, n, cfg.mode);
  const bool has_k = cfg.mode != PolicyMode::OpenLoop;
  const bool has_l = cfg.mode == PolicyMode::ContactAware;

  std::vector<std::vector<StageMatrices>> stages(n);
  for (int i = 0; i < n; ++i) stages[i] = realize_stages(sys, particles[i].xi);

  Eigen::VectorXd x0_mean = Eigen::VectorXd::Zero(d.n_x);
  for (const Particle& pt : particles) x0_mean += pt.x0;
  x0_mean *= w_mean;

  // Warm start: zero-input rollout of every particle.
  const ControllerPolicy nominal =
      ControllerPolicy::zero(d, PolicyMode::OpenLoop);
  std::vector<Eigen::MatrixXd> warm_x(n), warm_lam(n);
  for (int i = 0; i < n; ++i) {
    try {
      const Trajectory traj = rollout(sys, particles[i], nominal);
      warm_x[i] = traj.x;
      warm_lam[i] = traj.lambda;
    } catch (const NoSolutionFound&) {
      warm_x[i] = Eigen::MatrixXd::Zero(t_hor + 1, d.n_x);
      warm_x[i].row(0) = particles[i].x0.transpose();
      warm_lam[i] = Eigen::MatrixXd::Zero(t_hor, d.n_c);
    }
  }

  // Realized control of particle i at step k, component a, with the means
  // expanded over the particle variables.
  auto u_expr = [&](int i, int k, int a) {
    ScalarExpr e = ScalarExpr::var(lay.v_index(k, a));
    if (has_k) {
      for (int b = 0; b < d.n_x; ++b) {
        const int kk = lay.k_index(k, a, b);
        if (k == 0) {
          const double dev = particles[i].x0(b) - x0_mean(b);
          if (dev != 0.0) e.add_linear(kk, dev);
        } else {
          e.add_bilinear(kk, lay.x_index(i, k, b), 1.0);
          for (int j = 0; j < n; ++j)
            e.add_bilinear(kk, lay.x_index(j, k, b), -w_mean);
        }
      }
    }
    if (has_l) {
      for (int c = 0; c < d.n_c; ++c) {
        const int ll = lay.l_index(k, a, c);
        e.add_bilinear(ll, lay.lambda_index(i, k, c), 1.0);
        for (int j = 0; j < n; ++j)
          e.add_bilinear(ll, lay.lambda_index(j, k, c), -w_mean);
      }
    }
    return e;
  };

  std::vector<std::vector<std::vector<ScalarExpr>>> u_cache(n);
  for (int i = 0; i < n; ++i) {
    u_cache[i].resize(t_hor);
    for (int k = 0; k < t_hor; ++k) {
      u_cache[i][k].reserve(d.n_u);
      for (int a = 0; a < d.n_u; ++a) u_cache[i][k].push_back(u_expr(i, k, a));
    }
  }

  NlpProblem p;
  p.n_vars = lay.n_vars;

  // Dynamics equalities and the chance stationarity row, per particle.
  for (int i = 0; i < n; ++i) {
    const Particle& pt = particles[i];
    for (int k = 0; k < t_hor; ++k) {
      const StageMatrices& m = stages[i][k];
      for (int a = 0; a < d.n_x; ++a) {
        ScalarExpr row = ScalarExpr::var(lay.x_index(i, k + 1, a));
        if (k == 0) {
          row.add_constant(-m.A.row(a).dot(pt.x0));
        } else {
          for (int b = 0; b < d.n_x; ++b)
            if (m.A(a, b) != 0.0)
              row.add_linear(lay.x_index(i, k, b), -m.A(a, b));
        }
        for (int a2 = 0; a2 < d.n_u; ++a2)
          if (m.B(a, a2) != 0.0) {
            ScalarExpr ue = u_cache[i][k][a2];
            ue *= -m.B(a, a2);
            row += ue;
          }
        for (int c = 0; c < d.n_c; ++c)
          if (m.C(a, c) != 0.0)
            row.add_linear(lay.lambda_index(i, k, c), -m.C(a, c));
        row.add_constant(-m.g(a) - pt.w(k, a));
        p.eq_constraints.push_back(std::move(row));
      }
    }
    ScalarExpr stat = ScalarExpr::var(lay.t_index(i));
    stat.add_linear(lay.w_plus_index(i), 1.0);
    stat.add_linear(lay.w_minus_index(i), -1.0);
    p.eq_constraints.push_back(std::move(stat));
  }

  // Contact complementarity, then the chance block pairs, per particle.
  for (int i = 0; i < n; ++i) {
    const Particle& pt = particles[i];
    for (int k = 0; k < t_hor; ++k) {
      const StageMatrices& m = stages[i][k];
      for (int c = 0; c < d.n_c; ++c) {
        ScalarExpr lam = ScalarExpr::var(lay.lambda_index(i, k, c));
        ScalarExpr margin;
        if (k == 0) {
          margin.add_constant(m.D.row(c).dot(pt.x0));
        } else {
          for (int b = 0; b < d.n_x; ++b)
            if (m.D(c, b) != 0.0)
              margin.add_linear(lay.x_index(i, k, b), m.D(c, b));
        }
        for (int a2 = 0; a2 < d.n_u; ++a2)
          if (m.E(c, a2) != 0.0) {
            ScalarExpr ue = u_cache[i][k][a2];
            ue *= m.E(c, a2);
            margin += ue;
          }
        for (int c2 = 0; c2 < d.n_c; ++c2)
          if (m.F(c, c2) != 0.0)
            margin.add_linear(lay.lambda_index(i, k, c2), m.F(c, c2));
        margin.add_constant(m.h(c) + pt.l(k, c));
        p.complementarity_pairs.emplace_back(std::move(lam),
                                             std::move(margin));
      }
    }
    ScalarExpr wp = ScalarExpr::var(lay.w_plus_index(i));
    ScalarExpr one_minus_z = ScalarExpr::var(lay.z_index(i), -1.0);
    one_minus_z.add_constant(1.0);
    p.complementarity_pairs.emplace_back(std::move(wp),
                                         std::move(one_minus_z));
    p.complementarity_pairs.emplace_back(ScalarExpr::var(lay.w_minus_index(i)),
                                         ScalarExpr::var(lay.z_index(i)));
  }

  // Control polytope on every realized control, then safe margins, per
  // particle; the shared chance row comes last.
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < t_hor; ++k)
      for (const ControlHalfspace& hs : cfg.control_polytope) {
        ScalarExpr row;
        for (int a = 0; a < d.n_u; ++a)
          if (hs.c(a) != 0.0) {
            ScalarExpr ue = u_cache[i][k][a];
            ue *= hs.c(a);
            row += ue;
          }
        row.add_constant(-hs.d);
        p.ineq_constraints.push_back(std::move(row));
      }
    for (const SafeConstraint& sc : cfg.safe.constraints) {
      ScalarExpr row;
      if (sc.step == 0) {
        row.add_constant(sc.a.dot(particles[i].x0));
      } else {
        for (int b = 0; b < d.n_x; ++b)
          if (sc.a(b) != 0.0)
            row.add_linear(lay.x_index(i, sc.step, b), sc.a(b));
      }
      row.add_constant(-sc.b);
      row.add_linear(lay.t_index(i), -1.0);
      p.ineq_constraints.push_back(std::move(row));
    }
  }
  {
    ScalarExpr chance;
    chance.add_constant(cfg.Delta);
    for (int i = 0; i < n; ++i) chance.add_linear(lay.z_index(i), -w_mean);
    p.ineq_constraints.push_back(std::move(chance));
  }

  // Objective: mean-state tracking plus the particle-averaged control cost
  // with the feedback deviations frozen at the warm start.
  std::vector<Eigen::Triplet<double>> ht;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(lay.n_vars);
  double constant = 0.0;
  const Eigen::VectorXd qxd = cfg.Q * cfg.x_d;
  for (int k = 1; k <= t_hor; ++k) {
    for (int a = 0; a < d.n_x; ++a)
      for (int b = 0; b < d.n_x; ++b) {
        if (cfg.Q(a, b) == 0.0) continue;
        const double coeff = 2.0 * cfg.Q(a, b) * w_mean * w_mean;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            ht.emplace_back(lay.x_index(i, k, a), lay.x_index(j, k, b), coeff);
      }
    for (int a = 0; a < d.n_x; ++a) {
      if (qxd(a) == 0.0) continue;
      for (int i = 0; i < n; ++i)
        grad(lay.x_index(i, k, a)) += -2.0 * w_mean * qxd(a);
    }
    constant += cfg.x_d.dot(qxd);
  }

  Eigen::MatrixXd warm_x_mean = Eigen::MatrixXd::Zero(t_hor + 1, d.n_x);
  Eigen::MatrixXd warm_lam_mean = Eigen::MatrixXd::Zero(t_hor, d.n_c);
  for (int i = 0; i < n; ++i) {
    warm_x_mean += w_mean * warm_x[i];
    warm_lam_mean += w_mean * warm_lam[i];
  }
  std::vector<std::pair<int, double>> coeffs_a, coeffs_b;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < t_hor; ++k) {
      auto control_coeffs = [&](int a, std::vector<std::pair<int, double>>& out) {
        out.clear();
        out.emplace_back(lay.v_index(k, a), 1.0);
        if (has_k)
          for (int b = 0; b < d.n_x; ++b)
            out.emplace_back(lay.k_index(k, a, b),
                             warm_x[i](k, b) - warm_x_mean(k, b));
        if (has_l)
          for (int c = 0; c < d.n_c; ++c)
            out.emplace_back(lay.l_index(k, a, c),
                             warm_lam[i](k, c) - warm_lam_mean(k, c));
      };
      for (int a = 0; a < d.n_u; ++a) {
        control_coeffs(a, coeffs_a);
        for (int a2 = 0; a2 < d.n_u; ++a2) {
          if (cfg.R(a, a2) == 0.0) continue;
          control_coeffs(a2, coeffs_b);
          const double scale = 2.0 * cfg.R(a, a2) * w_mean;
          for (const auto& [p1, w1] : coeffs_a)
            for (const auto& [p2, w2] : coeffs_b) {
              const double v = scale * w1 * w2;
              if (v != 0.0) ht.emplace_back(p1, p2, v);
            }
        }
      }
    }
  for (int idx = lay.v_count; idx < lay.shared_count; ++idx)
    ht.emplace_back(idx, idx, 2.0 * kGainRidge);

  p.hessian.resize(lay.n_vars, lay.n_vars);
  p.hessian.setFromTriplets(ht.begin(), ht.end());
  p.gradient = std::move(grad);
  p.objective_constant = constant;

  p.lb = Eigen::VectorXd::Constant(lay.n_vars, -kInf);
  p.ub = Eigen::VectorXd::Constant(lay.n_vars, kInf);
  for (int i = 0; i < n; ++i) p.lb(lay.t_index(i)) = -cfg.epsilon_boundary;

  Eigen::VectorXd start = Eigen::VectorXd::Zero(lay.n_vars);
  for (int i = 0; i < n; ++i) {
    for (int k = 1; k <= t_hor; ++k)
      for (int a = 0; a < d.n_x; ++a)
        start(lay.x_index(i, k, a)) = warm_x[i](k, a);
    for (int k = 0; k < t_hor; ++k)
      for (int c = 0; c < d.n_c; ++c)
        start(lay.lambda_index(i, k, c)) = warm_lam[i](k, c);
    Trajectory warm;
    warm.x = warm_x[i];
    warm.lambda = warm_lam[i];
    warm.u = Eigen::MatrixXd::Zero(t_hor, d.n_u);
    const double t_warm =
        std::max(violation(warm, cfg.safe), -cfg.epsilon_boundary);
    start(lay.t_index(i)) = t_warm;
    start(lay.z_index(i)) = cfg.Delta;
    start(lay.w_plus_index(i)) = std::max(0.0, -t_warm);
    start(lay.w_minus_index(i)) = std::max(0.0, t_warm);
  }
  p.initial_point = std::move(start);

  p.validate();
  return p;
}

std::optional<double> encode_chance(double t) {
  if (t < 0.0) return 1.0;
  if (t > 0.0) return 0.0;
  return std::nullopt;
}

std::vector<ChanceBlock> chance_blocks(const MpccLayout& layout,
                                       const Eigen::VectorXd& x) {
  if (x.size() != layout.n_vars)
    throw DimensionMismatch("solution does not match the layout");
  std::vector<ChanceBlock> blocks(layout.n_particles);
  for (int i = 0; i < layout.n_particles; ++i) {
    blocks[i].t = x(layout.t_index(i));
    blocks[i].z = x(layout.z_index(i));
    blocks[i].w_plus = x(layout.w_plus_index(i));
    blocks[i].w_minus = x(layout.w_minus_index(i));
  }
  return blocks;
}

Eigen::MatrixXd solution_state(const MpccLayout& layout,
                               const Eigen::VectorXd& x,
                               const Particle& particle) {
  if (x.size() != layout.n_vars)
    throw DimensionMismatch("solution does not match the layout");
  if (particle.index < 0 || particle.index >= layout.n_particles)
    throw DimensionMismatch("particle index outside the layout");
  Eigen::MatrixXd out(layout.dims.horizon + 1, layout.dims.n_x);
  out.row(0) = particle.x0.transpose();
  for (int k = 1; k <= layout.dims.horizon; ++k)
    for (int a = 0; a < layout.dims.n_x; ++a)
      out(k, a) = x(layout.x_index(particle.index, k, a));
  return out;
}

Eigen::MatrixXd solution_contact(const MpccLayout& layout,
                                 const Eigen::VectorXd& x, int i) {
  if (x.size() != layout.n_vars)
    throw DimensionMismatch("solution does not match the layout");
  if (i < 0 || i >= layout.n_particles)
    throw DimensionMismatch("particle index outside the layout");
  Eigen::MatrixXd out(layout.dims.horizon, layout.dims.n_c);
  for (int k = 0; k < layout.dims.horizon; ++k)
    for (int c = 0; c < layout.dims.n_c; ++c)
      out(k, c) = x(layout.lambda_index(i, k, c));
  return out;
}

ControllerPolicy extract_policy(const UncertainLcs& sys,
                                const std::vector<Particle>& particles,
                                const SolveReport& report,
                                const SteeringConfig& cfg) {
  if (report.status != NlpStatus::Optimal)
    throw NotOptimal("policy extraction needs an Optimal report");
  if (particles.empty()) throw EmptyParticles("extract_policy needs particles");
  const Dims& d = sys.dims;
  const int n = static_cast<int>(particles.size());
  const MpccLayout lay = make_layout(d, n, cfg.mode);
  if (report.x_star.size() != lay.n_vars)
    throw DimensionMismatch("report does not match the layout");
  const Eigen::VectorXd& x = report.x_star;
  const double w_mean = 1.0 / n;

  ControllerPolicy pol = ControllerPolicy::zero(d, cfg.mode);
  for (int k = 0; k < d.horizon; ++k)
    for (int a = 0; a < d.n_u; ++a) pol.v(k, a) = x(lay.v_index(k, a));
  if (cfg.mode != PolicyMode::OpenLoop)
    for (int k = 0; k < d.horizon; ++k)
      for (int a = 0; a < d.n_u; ++a)
        for (int b = 0; b < d.n_x; ++b)
          pol.K[k](a, b) = x(lay.k_index(k, a, b));
  if (cfg.mode == PolicyMode::ContactAware)
    for (int k = 0; k < d.horizon; ++k)
      for (int a = 0; a < d.n_u; ++a)
        for (int c = 0; c < d.n_c; ++c)
          pol.L[k](a, c) = x(lay.l_index(k, a, c));

  pol.x_ref.setZero();
  pol.lambda_ref.setZero();
  for (int i = 0; i < n; ++i) {
    pol.x_ref.row(0) += w_mean * particles[i].x0.transpose();
    for (int k = 1; k <= d.horizon; ++k)
      for (int a = 0; a < d.n_x; ++a)
        pol.x_ref(k, a) += w_mean * x(lay.x_index(i, k, a));
    for (int k = 0; k < d.horizon; ++k)
      for (int c = 0; c < d.n_c; ++c)
        pol.lambda_ref(k, c) += w_mean * x(lay.lambda_index(i, k, c));
  }
  return pol;
}

double violation(const Trajectory& traj, const SafeSet& safe) {
  double worst = -kInf;
  for (const SafeConstraint& sc : safe.constraints) {
    if (sc.step < 0 || sc.step >= traj.x.rows() ||
        sc.a.size() != traj.x.cols())
      throw DimensionMismatch("safe constraint does not match the trajectory");
    worst = std::max(worst, sc.a.dot(traj.x.row(sc.step).transpose()) - sc.b);
  }
  return worst;
}

}  // namespace csteer
