#include "rectflow/velocity_exact.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace rectflow {

ExactVelocity::ExactVelocity(PointCloud targets, double sigma0)
    : targets_(std::move(targets)), sigma0_(sigma0) {
  if (targets_.rows() < 1 || targets_.cols() < 1)
    throw std::invalid_argument("ExactVelocity: empty target cloud");
  check_finite(targets_, "ExactVelocity.targets");
  if (!(sigma0_ > 0.0) || !std::isfinite(sigma0_))
    throw std::invalid_argument("ExactVelocity: sigma0 must be positive");

  // Collapse repeated rows (empirical targets are often a few atoms
  // resampled many times) into multiplicity weights.
  const Eigen::Index n = targets_.rows();
  const Eigen::Index d = targets_.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto row_less = [this, d](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (targets_(a, j) != targets_(b, j)) return targets_(a, j) < targets_(b, j);
    }
    return false;
  };
  const auto row_eq = [this, d](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (targets_(a, j) != targets_(b, j)) return false;
    }
    return true;
  };
  std::sort(order.begin(), order.end(), row_less);

  std::vector<Eigen::Index> uniques;
  std::vector<double> counts;
  for (Eigen::Index idx : order) {
    if (!uniques.empty() && row_eq(uniques.back(), idx)) {
      counts.back() += 1.0;
    } else {
      uniques.push_back(idx);
      counts.push_back(1.0);
    }
  }
  const Eigen::Index u = static_cast<Eigen::Index>(uniques.size());
  if (u < n) {
    PointCloud distinct(u, d);
    for (Eigen::Index i = 0; i < u; ++i)
      distinct.row(i) = targets_.row(uniques[static_cast<std::size_t>(i)]);
    targets_ = std::move(distinct);
  }
  log_mult_ = Eigen::VectorXd::Zero(u);
  for (Eigen::Index i = 0; i < u; ++i)
    log_mult_[i] = std::log(counts[static_cast<std::size_t>(i)]);
}

void ExactVelocity::check_time(double t) const {
  if (!(t >= 0.0 && t < 1.0))
    throw std::domain_error("ExactVelocity: t must lie in [0, 1)");
}

PointCloud ExactVelocity::eval_rows(const PointCloud& zs, double t) const {
  check_time(t);
  if (zs.cols() != targets_.cols())
    throw std::invalid_argument("ExactVelocity: dimension mismatch");
  const double omt = 1.0 - t;
  const double scale = -0.5 / (sigma0_ * sigma0_ * omt * omt);

  // log-weights(i, k) = scale * ||z_i - t x_k||^2, expanded via a gemm.
  Eigen::VectorXd z2 = zs.rowwise().squaredNorm();
  Eigen::VectorXd x2 = targets_.rowwise().squaredNorm();
  Eigen::MatrixXd logw = (-2.0 * t) * (zs * targets_.transpose());
  logw.colwise() += z2;
  logw.rowwise() += (t * t) * x2.transpose();
  logw *= scale;
  logw.rowwise() += log_mult_.transpose();

  // Row softmax with max subtraction.
  Eigen::VectorXd rowmax = logw.rowwise().maxCoeff();
  logw.colwise() -= rowmax;
  Eigen::MatrixXd w = logw.array().exp().matrix();
  Eigen::VectorXd norm = w.rowwise().sum();
  w.array().colwise() /= norm.array();

  return (w * targets_ - zs) / omt;
}

Eigen::VectorXd ExactVelocity::weights(const Point& z, double t) const {
  check_time(t);
  if (z.size() != targets_.cols())
    throw std::invalid_argument("ExactVelocity: dimension mismatch");
  const double omt = 1.0 - t;
  const double scale = -0.5 / (sigma0_ * sigma0_ * omt * omt);
  // Rows of diff are z - t x_k.
  PointCloud diff = (-t * targets_).rowwise() + z.transpose();
  Eigen::VectorXd logw = scale * diff.rowwise().squaredNorm() + log_mult_;
  Eigen::VectorXd shifted = logw.array() - logw.maxCoeff();
  Eigen::VectorXd w = shifted.array().exp();
  return w / w.sum();
}

Eigen::MatrixXd ExactVelocity::jacobian(const Point& z, double t) const {
  check_time(t);
  const Eigen::Index d = targets_.cols();
  const double omt = 1.0 - t;
  const double s2 = sigma0_ * sigma0_ * omt * omt;

  Eigen::VectorXd w = weights(z, t);
  // g_i = (t x_i - z) / s2, the gradient of atom i's log weight before
  // normalization; a_i = x_i - z.
  PointCloud g = (t * targets_).rowwise() - z.transpose();
  g /= s2;
  PointCloud a = targets_.rowwise() - z.transpose();
  Eigen::RowVectorXd gbar = w.transpose() * g;
  Eigen::MatrixXd m = a.transpose() * (w.asDiagonal() * g);
  Eigen::VectorXd abar = a.transpose() * w;
  Eigen::MatrixXd jac = m - abar * gbar;
  jac -= Eigen::MatrixXd::Identity(d, d);
  return jac / omt;
}

double data_recovery_check(const ExactVelocity& v, Eigen::Index n, int steps,
                           Rng& rng) {
  if (n < 1 || steps < 1)
    throw std::invalid_argument("data_recovery_check: n and steps must be positive");
  PointCloud z = v.sigma0() * standard_normal_batch(rng, n, v.targets().cols());
  const double h = 1.0 / steps;
  for (int j = 0; j < steps; ++j)
    z += h * v.eval_rows(z, j * h);

  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < v.targets().rows(); ++k)
      best = std::min(best, (z.row(i) - v.targets().row(k)).norm());
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace rectflow
