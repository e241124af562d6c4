#pragma once

// Nonparametric velocity estimator over a finite coupling: at query (z, t)
// the straight-line interpolants x_t^i = t x1^i + (1-t) x0^i of the m nearest
// pairs vote with Gaussian RBF weights exp(-||x_t^i - z||^2 / (2 h^2)),
// normalized over that neighbor subset, and the field is
//   v(z, t) = sum_neighbors w_i (x1^i - z) / (1 - t).
// Defaults h = 1, m = 100. Undefined at t = 1 (domain error).

#include "rectflow/velocity.hpp"

#include <vector>

namespace rectflow {

// Indices of the m nearest rows of `cloud` to `z` in Euclidean distance,
// in ascending distance order, ties broken toward the lower row index.
std::vector<Eigen::Index> knn_indices(const PointCloud& cloud, const Point& z,
                                      Eigen::Index m);

class KernelVelocity final : public VelocityField {
 public:
  KernelVelocity(Coupling pairs, double bandwidth = 1.0, Eigen::Index knn_m = 100);

  PointCloud eval_rows(const PointCloud& zs, double t) const override;

  double bandwidth() const { return bandwidth_; }
  Eigen::Index knn_m() const { return knn_m_; }
  const Coupling& pairs() const { return pairs_; }

 private:
  Coupling pairs_;
  double bandwidth_;
  Eigen::Index knn_m_;
};

}  // namespace rectflow
