#include "rectflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace rectflow {

double straightness(const TrajectoryEnsemble& traj) {
  if (traj.states.size() < 2 || traj.states.size() != traj.times.size())
    throw std::invalid_argument("straightness: need at least two recorded states");
  const PointCloud chord = traj.final_state() - traj.initial();
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < traj.states.size(); ++j) {
    double dt = traj.times[j + 1] - traj.times[j];
    if (!(dt > 0.0))
      throw std::invalid_argument("straightness: times must be strictly increasing");
    PointCloud dev = (traj.states[j + 1] - traj.states[j]) / dt - chord;
    total += dt * dev.rowwise().squaredNorm().mean();
  }
  return total;
}

double crossing_v(const Coupling& pairs, const VelocityField& v, int time_samples) {
  pairs.validate();
  if (time_samples < 1)
    throw std::invalid_argument("crossing_v: time_samples must be positive");
  const PointCloud disp = pairs.right - pairs.left;
  double acc = 0.0;
  for (int j = 0; j < time_samples; ++j) {
    double t = (j + 0.5) / time_samples;
    PointCloud xt = t * pairs.right + (1.0 - t) * pairs.left;
    acc += (disp - v.eval_rows(xt, t)).rowwise().squaredNorm().mean();
  }
  return acc / time_samples;
}

ConvexCost ConvexCost::pow_norm(double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("ConvexCost: p must be >= 1");
  return {p};
}

double ConvexCost::operator()(const Point& u) const {
  double r = u.norm();
  if (p == 1.0) return r;
  if (p == 2.0) return r * r;
  return std::pow(r, p);
}

double transport_cost(const Coupling& c, const ConvexCost& cost) {
  c.validate();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i)
    acc += cost((c.right.row(i) - c.left.row(i)).transpose());
  return acc / static_cast<double>(c.size());
}

Assignment hungarian_assignment(const Eigen::MatrixXd& cost) {
  const Eigen::Index n = cost.rows();
  if (n < 1 || cost.cols() != n)
    throw std::invalid_argument("hungarian_assignment: cost must be square");
  check_finite(cost, "hungarian_assignment.cost");

  const double inf = std::numeric_limits<double>::infinity();
  // Potentials over rows (u) and columns (v); p[j] = row matched to column j,
  // with column 0 as the virtual root. 1-based over the matrix.
  std::vector<double> u(n + 1, 0.0), pot(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<Eigen::Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);

  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      Eigen::Index i0 = p[j0], j1 = 0;
      double delta = inf;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - pot[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          pot[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      Eigen::Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  Assignment a;
  a.col_of_row.assign(static_cast<std::size_t>(n), -1);
  for (Eigen::Index j = 1; j <= n; ++j)
    a.col_of_row[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  for (Eigen::Index i = 0; i < n; ++i)
    a.total_cost += cost(i, a.col_of_row[static_cast<std::size_t>(i)]);
  return a;
}

double relative_l2_cost(const Coupling& c, Eigen::Index cap) {
  c.validate();
  const Eigen::Index n = c.size();
  if (n > cap)
    throw std::invalid_argument("relative_l2_cost: coupling exceeds the assignment cap");
  double coupling_cost = (c.right - c.left).rowwise().squaredNorm().mean();

  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    d2.row(i) = (c.right.rowwise() - c.left.row(i)).rowwise().squaredNorm().transpose();
  Assignment a = hungarian_assignment(d2);
  return coupling_cost - a.total_cost / static_cast<double>(n);
}

double energy_distance(const PointCloud& a, const PointCloud& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("energy_distance: dimension mismatch");
  if (a.rows() < 1 || b.rows() < 1)
    throw std::invalid_argument("energy_distance: empty cloud");
  auto mean_cross = [](const PointCloud& x, const PointCloud& y) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      acc += (y.rowwise() - x.row(i)).rowwise().norm().sum();
    return acc / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
  };
  return 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
}

double energy_perm_pvalue(const PointCloud& a, const PointCloud& b,
                          int n_perms, Rng& rng) {
  if (n_perms < 1)
    throw std::invalid_argument("energy_perm_pvalue: n_perms must be positive");
  const double observed = energy_distance(a, b);
  const Eigen::Index n = a.rows(), m = b.rows(), total = n + m;

  // Pooled distance matrix in single precision; the permuted statistics are
  // accumulated in double and only compared against each other.
  PointCloud pooled(total, a.cols());
  pooled.topRows(n) = a;
  pooled.bottomRows(m) = b;
  Eigen::MatrixXf dist(total, total);
  for (Eigen::Index i = 0; i < total; ++i) {
    dist.row(i) =
        (pooled.rowwise() - pooled.row(i)).rowwise().norm().transpose().cast<float>();
  }

  std::vector<Eigen::Index> label(static_cast<std::size_t>(total));
  std::iota(label.begin(), label.end(), Eigen::Index{0});
  std::vector<char> in_a(static_cast<std::size_t>(total));

  int exceed = 0;
  for (int perm = 0; perm < n_perms; ++perm) {
    // Fisher-Yates; the first n slots form the permuted "a" sample.
    for (Eigen::Index i = total - 1; i > 0; --i) {
      auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(label[static_cast<std::size_t>(i)], label[static_cast<std::size_t>(j)]);
    }
    std::fill(in_a.begin(), in_a.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) in_a[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])] = 1;

    double sum_a = 0.0, sum_b = 0.0, sum_x = 0.0;
    for (Eigen::Index i = 0; i < total; ++i) {
      bool ia = in_a[static_cast<std::size_t>(i)];
      for (Eigen::Index j = i + 1; j < total; ++j) {
        double d = dist(i, j);
        bool ja = in_a[static_cast<std::size_t>(j)];
        if (ia && ja)
          sum_a += d;
        else if (!ia && !ja)
          sum_b += d;
        else
          sum_x += d;
      }
    }
    double nn = static_cast<double>(n), mm = static_cast<double>(m);
    double stat = 2.0 * sum_x / (nn * mm) - 2.0 * sum_a / (nn * nn) -
                  2.0 * sum_b / (mm * mm);
    if (stat >= observed) ++exceed;
  }
  return (1.0 + exceed) / (n_perms + 1.0);
}

double burgers_residual(const VelocityField& v, const PointCloud& probes,
                        const std::vector<double>& times, double fd_step) {
  check_finite(probes, "burgers_residual.probes");
  if (probes.rows() < 1) throw std::invalid_argument("burgers_residual: no probes");
  if (times.empty()) throw std::invalid_argument("burgers_residual: no times");
  if (!(fd_step > 0.0)) throw std::invalid_argument("burgers_residual: bad fd_step");

  const Eigen::Index d = probes.cols();
  double acc = 0.0;
  for (double t : times) {
    PointCloud vel = v.eval_rows(probes, t);
    PointCloud res =
        (v.eval_rows(probes, t + fd_step) - v.eval_rows(probes, t - fd_step)) /
        (2.0 * fd_step);
    for (Eigen::Index j = 0; j < d; ++j) {
      PointCloud shift = PointCloud::Zero(probes.rows(), d);
      shift.col(j).setConstant(fd_step);
      // Column j of each probe's Jacobian, times the j-th velocity component.
      PointCloud dj = (v.eval_rows(probes + shift, t) - v.eval_rows(probes - shift, t)) /
                      (2.0 * fd_step);
      res.array() += dj.array().colwise() * vel.col(j).array();
    }
    acc += res.rowwise().norm().mean();
  }
  return acc / static_cast<double>(times.size());
}

long monotone_violations(const Coupling& c) {
  c.validate();
  if (c.dim() != 1)
    throw std::invalid_argument("monotone_violations: defined for 1D couplings");
  const Eigen::Index n = c.size();
  long count = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double li = c.left(i, 0), lj = c.left(j, 0);
      double ri = c.right(i, 0), rj = c.right(j, 0);
      if ((li < lj && ri > rj) || (lj < li && rj > ri)) ++count;
    }
  return count;
}

nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("straightness", r.straightness);
  put("crossing_v", r.crossing_v);
  put("cost_l2sq", r.cost_l2sq);
  put("cost_l1", r.cost_l1);
  put("cost_p15", r.cost_p15);
  put("relative_l2_cost", r.relative_l2_cost);
  for (const auto& [t, val] : r.marginal_distances) {
    // 0.25 -> "marginal_t025": the digits of the time's decimal fraction.
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", t);
    std::string digits(buf);
    auto dot = digits.find('.');
    digits = dot == std::string::npos ? digits : digits.substr(dot + 1);
    j["marginal_t0" + digits] = val;
  }
  put("burgers_residual", r.burgers_residual);
  if (r.monotone_violations) j["monotone_violations"] = *r.monotone_violations;
  return j;
}

}  // namespace rectflow
