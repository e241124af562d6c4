#pragma once

// Closed-form optimal velocity for straight-line interpolation between a
// Gaussian source N(0, sigma0^2 I) and a finite set of target atoms.
//
// With atoms x^1..x^m, the conditional mean velocity at (z, t) is
//   v(z, t) = sum_i w_i(z, t) (x^i - z) / (1 - t),
//   w_i ~ softmax over i of -||z - t x^i||^2 / (2 sigma0^2 (1-t)^2),
// computed in log space with max subtraction so it stays stable as the
// weights sharpen near t = 1. The field is undefined at t = 1 (domain error).

#include "rectflow/velocity.hpp"

namespace rectflow {

class ExactVelocity final : public VelocityField {
 public:
  // targets: m x d atom cloud (support of the target), sigma0 > 0.
  // Bitwise-identical rows are collapsed into one atom carrying their
  // multiplicity as a log-weight offset; the field is unchanged but
  // evaluation scales with the number of distinct atoms.
  ExactVelocity(PointCloud targets, double sigma0);

  PointCloud eval_rows(const PointCloud& zs, double t) const override;

  // Softmax weights over atoms for a single query; exposed for tests.
  Eigen::VectorXd weights(const Point& z, double t) const;

  // Exact spatial Jacobian d v / d z at a single query point:
  //   (1/(1-t)) * [ sum_i w_i (x^i - z) (g_i - gbar)^T - I ],
  // where g_i is the gradient of the log weight of atom i.
  Eigen::MatrixXd jacobian(const Point& z, double t) const;

  // Distinct atoms after collapsing duplicates.
  const PointCloud& targets() const { return targets_; }
  double sigma0() const { return sigma0_; }

 private:
  void check_time(double t) const;

  PointCloud targets_;
  Eigen::VectorXd log_mult_;  // log multiplicity per distinct atom
  double sigma0_;
};

// Simulates n particles from N(0, sigma0^2 I) with `steps` uniform Euler
// steps (the last step, taken at t = 1 - 1/steps, coincides with the exact
// jump z + (1-t) v(z, t)), then reports the largest distance from any final
// particle to its nearest target atom. Near zero means the flow reproduces
// the atoms exactly.
double data_recovery_check(const ExactVelocity& v, Eigen::Index n, int steps,
                           Rng& rng);

}  // namespace rectflow
