#include "csteer/benchmarks.hpp"

#include <cmath>

#include "csteer/errors.hpp"

namespace csteer {

SoftwallRow softwall_complementarity(double k, AffineGap gap) {
  if (!(k > 0.0)) throw NonpositiveStiffness("wall stiffness must be > 0");
  SoftwallRow row;
  row.f_diag = 1.0 / k;
  row.gap = std::move(gap);
  return row;
}

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0))
    throw NonpositiveStiffness(std::string(name) + " must be > 0");
}

void require_positive_support(const DistributionSpec& spec, const char* name) {
  spec.validate();
  if (!(spec.support_lo() > 0.0))
    throw NonpositiveStiffness(std::string(name) +
                               " support must be strictly positive");
}

// Assembles stage matrices from continuous-time dynamics
//   qddot = S x + b u + sum_j c_j lam_j
// under explicit Euler, plus one softwall row per contact.
StageMatrices assemble(const Eigen::MatrixXd& a_cont,
                       const Eigen::VectorXd& b_cont,
                       const Eigen::MatrixXd& c_cont,
                       const std::vector<SoftwallRow>& rows, double dt) {
  const int n_x = static_cast<int>(a_cont.rows());
  const int n_c = static_cast<int>(rows.size());
  StageMatrices m;
  m.A = Eigen::MatrixXd::Identity(n_x, n_x) + dt * a_cont;
  m.B = dt * b_cont;
  m.C = dt * c_cont;
  m.g = Eigen::VectorXd::Zero(n_x);
  m.D.setZero(n_c, n_x);
  m.E.setZero(n_c, 1);
  m.F.setZero(n_c, n_c);
  m.h.setZero(n_c);
  for (int j = 0; j < n_c; ++j) {
    m.D.row(j) = rows[j].gap.x_coeff;
    if (rows[j].gap.u_coeff.size() > 0) m.E.row(j) = rows[j].gap.u_coeff;
    m.F(j, j) = rows[j].f_diag;
    m.h(j) = rows[j].gap.offset;
  }
  return m;
}

}  // namespace

UncertainLcs make_cartpole(const CartpoleParams& p) {
  require_positive(p.m_p, "pole mass");
  require_positive(p.m_c, "cart mass");
  require_positive(p.l, "pole length");
  require_positive(p.d, "wall distance");
  require_positive(p.dt, "dt");
  require_positive_support(p.k1_spec, "k1");
  require_positive_support(p.k2_spec, "k2");

  UncertainLcs sys;
  sys.dims = {4, 1, 2, p.horizon, p.dt};
  sys.parameter_specs["k1"] = p.k1_spec;
  sys.parameter_specs["k2"] = p.k2_spec;

  // Linearized about the upright pole. The tip displacement is
  // pos + l * angle; wall 1 sits at +d and pushes back, wall 2 at -d.
  // Contact forces cancel from the cart row and enter only the pole row.
  sys.stage_builder = [p](int, const ParameterMap& xi) {
    Eigen::MatrixXd a_cont = Eigen::MatrixXd::Zero(4, 4);
    a_cont(0, 2) = 1.0;
    a_cont(1, 3) = 1.0;
    a_cont(2, 1) = -p.m_p * p.g / p.m_c;
    a_cont(3, 1) = p.g * (p.m_c + p.m_p) / (p.l * p.m_c);
    Eigen::VectorXd b_cont(4);
    b_cont << 0.0, 0.0, 1.0 / p.m_c, -1.0 / (p.l * p.m_c);
    Eigen::MatrixXd c_cont = Eigen::MatrixXd::Zero(4, 2);
    c_cont(3, 0) = -1.0 / (p.m_p * p.l);
    c_cont(3, 1) = 1.0 / (p.m_p * p.l);

    AffineGap gap1;  // d - pos - l * angle
    gap1.x_coeff = Eigen::RowVectorXd{{-1.0, -p.l, 0.0, 0.0}};
    gap1.offset = p.d;
    AffineGap gap2;  // d + pos + l * angle
    gap2.x_coeff = Eigen::RowVectorXd{{1.0, p.l, 0.0, 0.0}};
    gap2.offset = p.d;
    std::vector<SoftwallRow> rows = {
        softwall_complementarity(xi.at("k1"), gap1),
        softwall_complementarity(xi.at("k2"), gap2)};
    return assemble(a_cont, b_cont, c_cont, rows, p.dt);
  };

  sys.process_noise_specs.assign(4, DistributionSpec::point_mass(0.0));
  sys.complementarity_noise_specs.assign(2, DistributionSpec::point_mass(0.0));
  sys.initial_state_specs = p.x0_specs;
  sys.validate();
  return sys;
}

UncertainLcs make_acrobot(const AcrobotParams& p) {
  require_positive(p.m1, "first link mass");
  require_positive(p.m2, "second link mass");
  require_positive(p.l1, "first link length");
  require_positive(p.d, "angle limit");
  require_positive(p.dt, "dt");
  require_positive_support(p.k_spec, "k");
  require_positive_support(p.l2_spec, "l2");

  UncertainLcs sys;
  sys.dims = {4, 1, 2, p.horizon, p.dt};
  sys.parameter_specs["k"] = p.k_spec;
  sys.parameter_specs["l2"] = p.l2_spec;

  // Point masses at the link ends, linearized about both links upright.
  // lam1 acts at the lower limit theta1 = -d, lam2 at the upper limit +d;
  // both are torques on the first joint.
  sys.stage_builder = [p](int, const ParameterMap& xi) {
    const double l2 = xi.at("l2");
    const double m11 = p.m1 * p.l1 * p.l1 + p.m2 * (p.l1 + l2) * (p.l1 + l2);
    const double m12 = p.m2 * l2 * (p.l1 + l2);
    const double m22 = p.m2 * l2 * l2;
    const double det = m11 * m22 - m12 * m12;
    Eigen::Matrix2d m_inv;
    m_inv << m22 / det, -m12 / det, -m12 / det, m11 / det;

    Eigen::Matrix2d grav;  // destabilizing gravity stiffness about upright
    grav << p.g * ((p.m1 + p.m2) * p.l1 + p.m2 * l2), p.g * p.m2 * l2,
        p.g * p.m2 * l2, p.g * p.m2 * l2;

    Eigen::MatrixXd a_cont = Eigen::MatrixXd::Zero(4, 4);
    a_cont(0, 2) = 1.0;
    a_cont(1, 3) = 1.0;
    a_cont.block<2, 2>(2, 0) = m_inv * grav;
    Eigen::VectorXd b_cont(4);
    b_cont << 0.0, 0.0, m_inv(0, 1), m_inv(1, 1);
    Eigen::MatrixXd c_cont = Eigen::MatrixXd::Zero(4, 2);
    c_cont.block<2, 1>(2, 0) = m_inv.col(0);
    c_cont.block<2, 1>(2, 1) = -m_inv.col(0);

    AffineGap gap1;  // d + theta1
    gap1.x_coeff = Eigen::RowVectorXd{{1.0, 0.0, 0.0, 0.0}};
    gap1.offset = p.d;
    AffineGap gap2;  // d - theta1
    gap2.x_coeff = Eigen::RowVectorXd{{-1.0, 0.0, 0.0, 0.0}};
    gap2.offset = p.d;
    const double k = xi.at("k");
    std::vector<SoftwallRow> rows = {softwall_complementarity(k, gap1),
                                     softwall_complementarity(k, gap2)};
    return assemble(a_cont, b_cont, c_cont, rows, p.dt);
  };

  sys.process_noise_specs.assign(4, DistributionSpec::point_mass(0.0));
  sys.complementarity_noise_specs.assign(2, DistributionSpec::point_mass(0.0));
  sys.initial_state_specs = p.x0_specs;
  sys.validate();
  return sys;
}

}  // namespace csteer
