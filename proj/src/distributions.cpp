#include "rectflow/distributions.hpp"

#include <cmath>
#include <numeric>

namespace rectflow {

Eigen::Index dist_dim(const DistributionSpec& spec) {
  struct V {
    Eigen::Index operator()(const DiagonalGaussian& g) const { return g.mean.size(); }
    Eigen::Index operator()(const GaussianMixture& m) const {
      return m.components.empty() ? 0 : m.components.front().mean.size();
    }
    Eigen::Index operator()(const Empirical& e) const { return e.points.cols(); }
    Eigen::Index operator()(const UniformBox& u) const { return u.lo.size(); }
  };
  return std::visit(V{}, spec);
}

void validate(const DistributionSpec& spec) {
  struct V {
    void operator()(const DiagonalGaussian& g) const {
      if (g.mean.size() == 0 || g.mean.size() != g.stddev.size())
        throw std::invalid_argument("gaussian: mean/stddev size mismatch");
      check_finite(g.mean, "gaussian.mean");
      check_finite(g.stddev, "gaussian.stddev");
      if ((g.stddev.array() <= 0.0).any())
        throw std::invalid_argument("gaussian: stddev must be positive");
    }
    void operator()(const GaussianMixture& m) const {
      if (m.components.empty() || m.weights.size() != m.components.size())
        throw std::invalid_argument("mixture: weights/components mismatch");
      double total = 0.0;
      for (double w : m.weights) {
        if (!(w > 0.0)) throw std::invalid_argument("mixture: weights must be positive");
        total += w;
      }
      if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("mixture: weights must sum to 1");
      Eigen::Index d = m.components.front().mean.size();
      for (const auto& c : m.components) {
        (*this)(c);
        if (c.mean.size() != d)
          throw std::invalid_argument("mixture: inconsistent component dims");
      }
    }
    void operator()(const Empirical& e) const {
      if (e.points.rows() < 1 || e.points.cols() < 1)
        throw std::invalid_argument("empirical: needs at least one point");
      check_finite(e.points, "empirical.points");
    }
    void operator()(const UniformBox& u) const {
      if (u.lo.size() == 0 || u.lo.size() != u.hi.size())
        throw std::invalid_argument("uniform: lo/hi size mismatch");
      check_finite(u.lo, "uniform.lo");
      check_finite(u.hi, "uniform.hi");
      if ((u.hi.array() <= u.lo.array()).any())
        throw std::invalid_argument("uniform: hi must exceed lo");
    }
  };
  std::visit(V{}, spec);
}

PointCloud sample(const DistributionSpec& spec, Eigen::Index n, Rng& rng) {
  validate(spec);
  if (n < 0) throw std::invalid_argument("sample: n must be nonnegative");
  Eigen::Index d = dist_dim(spec);
  PointCloud out(n, d);

  if (const auto* g = std::get_if<DiagonalGaussian>(&spec)) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        out(i, j) = g->mean[j] + g->stddev[j] * rng.normal();
  } else if (const auto* m = std::get_if<GaussianMixture>(&spec)) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double u = rng.uniform();
      std::size_t k = 0;
      double acc = 0.0;
      for (; k + 1 < m->weights.size(); ++k) {
        acc += m->weights[k];
        if (u < acc) break;
      }
      const auto& c = m->components[k];
      for (Eigen::Index j = 0; j < d; ++j)
        out(i, j) = c.mean[j] + c.stddev[j] * rng.normal();
    }
  } else if (const auto* e = std::get_if<Empirical>(&spec)) {
    auto rows = static_cast<std::uint64_t>(e->points.rows());
    for (Eigen::Index i = 0; i < n; ++i)
      out.row(i) = e->points.row(static_cast<Eigen::Index>(rng.below(rows)));
  } else {
    const auto& u = std::get<UniformBox>(spec);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        out(i, j) = u.lo[j] + (u.hi[j] - u.lo[j]) * rng.uniform();
  }
  return out;
}

Moments mean_and_cov(const DistributionSpec& spec) {
  validate(spec);
  Eigen::Index d = dist_dim(spec);
  Moments mo;
  mo.mean = Point::Zero(d);
  mo.cov = Eigen::MatrixXd::Zero(d, d);

  if (const auto* g = std::get_if<DiagonalGaussian>(&spec)) {
    mo.mean = g->mean;
    mo.cov = g->stddev.array().square().matrix().asDiagonal();
  } else if (const auto* m = std::get_if<GaussianMixture>(&spec)) {
    for (std::size_t k = 0; k < m->weights.size(); ++k)
      mo.mean += m->weights[k] * m->components[k].mean;
    for (std::size_t k = 0; k < m->weights.size(); ++k) {
      const auto& c = m->components[k];
      Eigen::MatrixXd second = c.stddev.array().square().matrix().asDiagonal();
      second += c.mean * c.mean.transpose();
      mo.cov += m->weights[k] * second;
    }
    mo.cov -= mo.mean * mo.mean.transpose();
  } else if (const auto* e = std::get_if<Empirical>(&spec)) {
    mo.mean = e->points.colwise().mean();
    PointCloud centered = e->points.rowwise() - mo.mean.transpose();
    mo.cov = centered.transpose() * centered / static_cast<double>(e->points.rows());
  } else {
    const auto& u = std::get<UniformBox>(spec);
    mo.mean = 0.5 * (u.lo + u.hi);
    mo.cov = ((u.hi - u.lo).array().square() / 12.0).matrix().asDiagonal();
  }
  return mo;
}

PointCloud smooth_source(const PointCloud& cloud, double sigma, Rng& rng) {
  check_finite(cloud, "smooth_source.cloud");
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("smooth_source: sigma must be nonnegative");
  if (sigma == 0.0) return cloud;
  return cloud + sigma * standard_normal_batch(rng, cloud.rows(), cloud.cols());
}

}  // namespace rectflow
