#include "rectflow/velocity_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rectflow {

std::vector<Eigen::Index> knn_indices(const PointCloud& cloud, const Point& z,
                                      Eigen::Index m) {
  if (m < 1 || m > cloud.rows())
    throw std::invalid_argument("knn_indices: m must lie in [1, n]");
  if (z.size() != cloud.cols())
    throw std::invalid_argument("knn_indices: dimension mismatch");

  Eigen::VectorXd d2 = (cloud.rowwise() - z.transpose()).rowwise().squaredNorm();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(cloud.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto closer = [&d2](Eigen::Index a, Eigen::Index b) {
    return d2[a] < d2[b] || (d2[a] == d2[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + (m - 1), idx.end(), closer);
  idx.resize(static_cast<std::size_t>(m));
  std::sort(idx.begin(), idx.end(), closer);
  return idx;
}

KernelVelocity::KernelVelocity(Coupling pairs, double bandwidth, Eigen::Index knn_m)
    : pairs_(std::move(pairs)), bandwidth_(bandwidth), knn_m_(knn_m) {
  pairs_.validate();
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_))
    throw std::invalid_argument("KernelVelocity: bandwidth must be positive");
  if (knn_m_ < 1 || knn_m_ > pairs_.size())
    throw std::invalid_argument("KernelVelocity: knn_m must lie in [1, n]");
}

PointCloud KernelVelocity::eval_rows(const PointCloud& zs, double t) const {
  if (!(t >= 0.0 && t < 1.0))
    throw std::domain_error("KernelVelocity: t must lie in [0, 1)");
  if (zs.cols() != pairs_.dim())
    throw std::invalid_argument("KernelVelocity: dimension mismatch");

  const Eigen::Index n = pairs_.size();
  const double omt = 1.0 - t;
  const double scale = -0.5 / (bandwidth_ * bandwidth_);
  PointCloud xt = t * pairs_.right + omt * pairs_.left;

  // Full squared-distance matrix queries x pairs via one gemm, then a
  // per-row neighbor selection. Fine at desk scale.
  Eigen::VectorXd q2 = zs.rowwise().squaredNorm();
  Eigen::VectorXd p2 = xt.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * (zs * xt.transpose());
  d2.colwise() += q2;
  d2.rowwise() += p2.transpose();

  PointCloud out(zs.rows(), zs.cols());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < zs.rows(); ++r) {
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    auto closer = [&d2, r](Eigen::Index a, Eigen::Index b) {
      return d2(r, a) < d2(r, b) || (d2(r, a) == d2(r, b) && a < b);
    };
    if (knn_m_ < n)
      std::nth_element(idx.begin(), idx.begin() + (knn_m_ - 1), idx.end(), closer);

    // Softmax over the neighbor subset in log space.
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < knn_m_; ++j) best = std::min(best, d2(r, idx[j]));
    double wsum = 0.0;
    Point vel = Point::Zero(zs.cols());
    for (Eigen::Index j = 0; j < knn_m_; ++j) {
      Eigen::Index i = idx[static_cast<std::size_t>(j)];
      double w = std::exp(scale * (d2(r, i) - best));
      wsum += w;
      vel += w * (pairs_.right.row(i).transpose() - zs.row(r).transpose());
    }
    out.row(r) = vel.transpose() / (wsum * omt);
  }
  return out;
}

}  // namespace rectflow
