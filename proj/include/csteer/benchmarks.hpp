#pragma once

#include <Eigen/Dense>
#include <vector>

#include "csteer/sdlcs.hpp"

namespace csteer {

// Affine gap function phi(x, u) = x_coeff . x + u_coeff . u + offset.
struct AffineGap {
  Eigen::RowVectorXd x_coeff;
  Eigen::RowVectorXd u_coeff;
  double offset = 0.0;
};

// One spring-wall complementarity row 0 <= lam perp lam/k + phi >= 0,
// which resolves to lam = max(0, -k phi).
struct SoftwallRow {
  double f_diag = 0.0;  // 1/k on the F diagonal
  AffineGap gap;        // contributes the D row, E row and h entry
};

SoftwallRow softwall_complementarity(double k, AffineGap gap);

// Cart with an inverted pole between two spring walls at +/- d from the
// origin. State (cart position, pole angle, cart rate, angle rate); the
// input is a horizontal force on the cart. Wall stiffnesses are uncertain.
struct CartpoleParams {
  double g = 9.81;
  double m_p = 0.1;  // pole mass
  double m_c = 1.0;  // cart mass
  double l = 0.5;    // pole length
  double d = 0.15;   // wall distance from the origin
  double dt = 0.1;
  int horizon = 6;
  DistributionSpec k1_spec = DistributionSpec::uniform(5.0, 14.0);
  DistributionSpec k2_spec = DistributionSpec::uniform(5.0, 12.0);
  std::vector<DistributionSpec> x0_specs = {
      DistributionSpec::point_mass(0.1), DistributionSpec::point_mass(0.15),
      DistributionSpec::point_mass(0.0), DistributionSpec::point_mass(0.0)};
};

UncertainLcs make_cartpole(const CartpoleParams& p = {});

// Two-link arm hanging upward with soft limits on the first joint at
// +/- d. State (theta1, theta2, rates); the input is an elbow torque. The
// limit stiffness k and the second link length l2 are uncertain.
struct AcrobotParams {
  double g = 9.81;
  double m1 = 0.5;  // first link point mass
  double m2 = 1.0;  // second link point mass
  double l1 = 0.5;  // first link length
  double d = 0.2;   // angle limit on theta1
  double dt = 0.04;
  int horizon = 15;
  DistributionSpec k_spec = DistributionSpec::uniform(0.6, 1.6);
  DistributionSpec l2_spec =
      DistributionSpec::truncated_gaussian(1.0, 0.01, 0.7, 1.3);
  std::vector<DistributionSpec> x0_specs = {
      DistributionSpec::point_mass(0.1), DistributionSpec::point_mass(-0.1),
      DistributionSpec::point_mass(0.4), DistributionSpec::point_mass(0.0)};
};

UncertainLcs make_acrobot(const AcrobotParams& p = {});

}  // namespace csteer
