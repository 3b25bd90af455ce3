#include "csteer/rollout.hpp"

#include <algorithm>
#include <future>
#include <utility>

#include "csteer/errors.hpp"
#include "csteer/lcp.hpp"

namespace csteer {

ControllerPolicy ControllerPolicy::zero(const Dims& dims, PolicyMode mode) {
  ControllerPolicy p;
  p.mode = mode;
  p.v = Eigen::MatrixXd::Zero(dims.horizon, dims.n_u);
  p.K.assign(dims.horizon, Eigen::MatrixXd::Zero(dims.n_u, dims.n_x));
  p.L.assign(dims.horizon, Eigen::MatrixXd::Zero(dims.n_u, dims.n_c));
  p.x_ref = Eigen::MatrixXd::Zero(dims.horizon + 1, dims.n_x);
  p.lambda_ref = Eigen::MatrixXd::Zero(dims.horizon, dims.n_c);
  return p;
}

void ControllerPolicy::validate(const Dims& dims) const {
  const int T = dims.horizon;
  if (v.rows() != T || v.cols() != dims.n_u)
    throw DimensionMismatch("policy feedforward must be horizon x n_u");
  if (static_cast<int>(K.size()) != T || static_cast<int>(L.size()) != T)
    throw DimensionMismatch("policy needs one gain pair per step");
  for (int k = 0; k < T; ++k) {
    if (K[k].rows() != dims.n_u || K[k].cols() != dims.n_x)
      throw DimensionMismatch("state gain must be n_u x n_x");
    if (L[k].rows() != dims.n_u || L[k].cols() != dims.n_c)
      throw DimensionMismatch("contact gain must be n_u x n_c");
    if (mode != PolicyMode::ContactAware && !L[k].isZero(0.0))
      throw ConfigError("contact gain requires the contact-aware mode");
    if (mode == PolicyMode::OpenLoop && !K[k].isZero(0.0))
      throw ConfigError("state gain requires a feedback mode");
  }
  if (x_ref.rows() != T + 1 || x_ref.cols() != dims.n_x)
    throw DimensionMismatch("state reference must be (horizon+1) x n_x");
  if (lambda_ref.rows() != T || lambda_ref.cols() != dims.n_c)
    throw DimensionMismatch("contact reference must be horizon x n_c");
}

void SafeSet::validate(const Dims& dims) const {
  for (const auto& c : constraints) {
    if (c.step < 0 || c.step > dims.horizon)
      throw ConfigError("safe-set constraint step outside 0..horizon");
    if (c.a.size() != dims.n_x)
      throw DimensionMismatch("safe-set normal must have n_x entries");
  }
}

bool SafeSet::contains(const Trajectory& traj) const {
  for (const auto& c : constraints) {
    if (c.a.dot(traj.x.row(c.step)) - c.b > 0.0) return false;
  }
  return true;
}

Trajectory rollout(const UncertainLcs& sys, const Particle& particle,
                   const ControllerPolicy& policy) {
  const Dims& dims = sys.dims;
  policy.validate(dims);
  const std::vector<StageMatrices> stages = realize_stages(sys, particle.xi);

  Trajectory traj;
  traj.x.setZero(dims.horizon + 1, dims.n_x);
  traj.lambda.setZero(dims.horizon, dims.n_c);
  traj.u.setZero(dims.horizon, dims.n_u);
  traj.x.row(0) = particle.x0.transpose();

  for (int k = 0; k < dims.horizon; ++k) {
    const StageMatrices& s = stages[k];
    const Eigen::VectorXd x_k = traj.x.row(k).transpose();
    const Eigen::VectorXd v_k = policy.v.row(k).transpose();
    const Eigen::VectorXd dx = x_k - policy.x_ref.row(k).transpose();

    Eigen::VectorXd u_pre = v_k + policy.K[k] * dx;
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(dims.n_c);
    if (dims.n_c > 0) {
      // lam_{k+1} enters its own feedback term, so fold L into the LCP:
      //   0 <= lam  perp  (F + E L) lam + D x + E u_pre - E L lam_ref + h + l
      LcpProblem lcp;
      lcp.M = s.F;
      lcp.q = s.D * x_k + s.E * u_pre + s.h + particle.l.row(k).transpose();
      if (policy.mode == PolicyMode::ContactAware) {
        lcp.M += s.E * policy.L[k];
        lcp.q -= s.E * policy.L[k] * policy.lambda_ref.row(k).transpose();
        if (dims.n_c <= 16 && !is_p_matrix(lcp.M))
          throw NotPMatrix("closed-loop contact matrix is not P", k);
      }
      lam = solve(lcp).lambda;
    }

    Eigen::VectorXd u_k = u_pre;
    if (policy.mode == PolicyMode::ContactAware)
      u_k += policy.L[k] * (lam - policy.lambda_ref.row(k).transpose());

    traj.lambda.row(k) = lam.transpose();
    traj.u.row(k) = u_k.transpose();
    traj.x.row(k + 1) = (s.A * x_k + s.B * u_k + s.C * lam + s.g +
                         particle.w.row(k).transpose())
                            .transpose();
  }
  return traj;
}

namespace {

// Rollout one particle; any contact-model failure marks it unrollable.
std::optional<Trajectory> try_rollout(const UncertainLcs& sys,
                                      const ControllerPolicy& policy,
                                      std::uint64_t seed, int index) {
  const Particle particle = sample_particle(sys, seed, index);
  try {
    return rollout(sys, particle, policy);
  } catch (const NotPMatrix&) {
    return std::nullopt;
  } catch (const NoSolutionFound&) {
    return std::nullopt;
  }
}

}  // namespace

SafetyEstimate estimate_safety(const UncertainLcs& sys,
                               const ControllerPolicy& policy,
                               const SafeSet& safe, int n, std::uint64_t seed,
                               int threads) {
  if (n <= 0) throw EmptyParticles("safety estimate needs n >= 1 particles");
  sys.validate();
  policy.validate(sys.dims);
  safe.validate(sys.dims);

  SafetyEstimate est;
  est.trajectories.resize(n);

  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i)
      est.trajectories[i] = try_rollout(sys, policy, seed, i);
  } else {
    // Static striping by index; each slot is written by exactly one worker
    // so the result is independent of scheduling and thread count.
    std::vector<std::future<void>> workers;
    workers.reserve(threads);
    for (int t = 0; t < threads; ++t) {
      workers.push_back(std::async(std::launch::async, [&, t] {
        for (int i = t; i < n; i += threads)
          est.trajectories[i] = try_rollout(sys, policy, seed, i);
      }));
    }
    for (auto& w : workers) w.get();
  }

  int safe_count = 0;
  for (const auto& slot : est.trajectories)
    if (slot.has_value() && safe.contains(*slot)) ++safe_count;
  est.delta_hat = static_cast<double>(safe_count) / static_cast<double>(n);
  return est;
}

Moments moments(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw EmptyInput("moments need trajectories");
  const auto n = static_cast<double>(trajectories.size());
  const Eigen::Index rows_x = trajectories[0].x.rows();
  const Eigen::Index n_x = trajectories[0].x.cols();
  const Eigen::Index rows_l = trajectories[0].lambda.rows();
  const Eigen::Index n_c = trajectories[0].lambda.cols();

  Moments m;
  m.x_mean.setZero(rows_x, n_x);
  m.lambda_mean.setZero(rows_l, n_c);
  for (const Trajectory& t : trajectories) {
    if (t.x.rows() != rows_x || t.x.cols() != n_x ||
        t.lambda.rows() != rows_l || t.lambda.cols() != n_c)
      throw DimensionMismatch("trajectories must share dimensions");
    m.x_mean += t.x;
    m.lambda_mean += t.lambda;
  }
  m.x_mean /= n;
  m.lambda_mean /= n;

  // Entries identical across the sample keep their exact value, so a
  // degenerate coordinate reports exactly zero spread.
  const auto snap = [&](Eigen::MatrixXd& mean, auto field) {
    for (Eigen::Index k = 0; k < mean.rows(); ++k) {
      for (Eigen::Index i = 0; i < mean.cols(); ++i) {
        const double v0 = field(trajectories[0])(k, i);
        bool same = true;
        for (const Trajectory& t : trajectories)
          if (field(t)(k, i) != v0) {
            same = false;
            break;
          }
        if (same) mean(k, i) = v0;
      }
    }
  };
  snap(m.x_mean, [](const Trajectory& t) -> const Eigen::MatrixXd& { return t.x; });
  snap(m.lambda_mean,
       [](const Trajectory& t) -> const Eigen::MatrixXd& { return t.lambda; });

  m.x_cov.assign(rows_x, Eigen::MatrixXd::Zero(n_x, n_x));
  if (trajectories.size() > 1) {
    for (const Trajectory& t : trajectories) {
      for (Eigen::Index k = 0; k < rows_x; ++k) {
        const Eigen::VectorXd d = (t.x.row(k) - m.x_mean.row(k)).transpose();
        m.x_cov[k] += d * d.transpose();
      }
    }
    for (auto& cov : m.x_cov) cov /= (n - 1.0);
  }
  return m;
}

std::vector<Trajectory> collect_valid(
    const std::vector<std::optional<Trajectory>>& trajectories) {
  std::vector<Trajectory> out;
  out.reserve(trajectories.size());
  for (const auto& slot : trajectories)
    if (slot.has_value()) out.push_back(*slot);
  return out;
}

}  // namespace csteer
