#pragma once

// Diagnostics that turn the transport theory into executable checks:
// path straightness, crossing variance, convex transport costs, exact
// optimal assignment and the derived relative cost, energy distance with a
// permutation test, a local self-consistency (Burgers) residual, and 1D
// monotonicity violations.

#include "rectflow/core.hpp"
#include "rectflow/ode.hpp"
#include "rectflow/velocity.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace rectflow {

// Time-weighted mean squared deviation of the recorded path velocity from
// the chord z1 - z0: sum_j dt_j * mean_i ||(z1_i - z0_i) - dz_ij/dt_j||^2.
// Zero iff every recorded path is a straight line traversed uniformly.
double straightness(const TrajectoryEnsemble& traj);

// Monte-Carlo estimate of integral E||(x1 - x0) - v(x_t, t)||^2 dt over the
// straight-line interpolation of `pairs`, with t on the midpoint grid
// (j + 1/2) / time_samples. With v the exact conditional expectation this is
// the crossing variance of the coupling; with a fitted v it upper-bounds it.
double crossing_v(const Coupling& pairs, const VelocityField& v,
                  int time_samples = 64);

// Convex costs c(u) = ||u||^p of the Euclidean norm, p in {1, 2, 1.5, ...}.
struct ConvexCost {
  double p = 2.0;
  static ConvexCost norm() { return {1.0}; }
  static ConvexCost sq_norm() { return {2.0}; }
  static ConvexCost pow_norm(double p);
  double operator()(const Point& u) const;
};

// Mean cost of the displacement right - left.
double transport_cost(const Coupling& c, const ConvexCost& cost);

struct Assignment {
  std::vector<Eigen::Index> col_of_row;
  double total_cost = 0.0;
};

// Exact O(n^3) minimum-cost perfect matching on a square cost matrix
// (potentials + augmenting paths).
Assignment hungarian_assignment(const Eigen::MatrixXd& cost);

// Mean squared coupling cost minus the mean optimal-assignment squared cost
// between the two marginals' samples. Nonnegative up to assignment-solver
// roundoff (>= -1e-9). Throws if c.size() exceeds `cap`.
double relative_l2_cost(const Coupling& c, Eigen::Index cap = 2048);

// Energy distance statistic between two sample clouds (V-statistic form:
// 2 E||a-b|| - E||a-a'|| - E||b-b'|| with all pairs included), so identical
// clouds score exactly 0.
double energy_distance(const PointCloud& a, const PointCloud& b);

// Permutation p-value for the hypothesis that a and b share a distribution:
// (1 + #{permuted stat >= observed}) / (n_perms + 1).
double energy_perm_pvalue(const PointCloud& a, const PointCloud& b,
                          int n_perms, Rng& rng);

// Mean norm of d/dt v + (dv/dz) v over probe points and times, by central
// finite differences with step fd_step. Zero for fields whose velocity is
// constant along their own trajectories (straight flows).
double burgers_residual(const VelocityField& v, const PointCloud& probes,
                        const std::vector<double>& times, double fd_step = 1e-4);

// Number of strictly inverted pairs (left_i < left_j but right_i > right_j)
// of a 1D coupling. Zero iff the coupling is monotone.
long monotone_violations(const Coupling& c);

struct MetricsReport {
  std::optional<double> straightness;
  std::optional<double> crossing_v;
  std::optional<double> cost_l2sq;
  std::optional<double> cost_l1;
  std::optional<double> cost_p15;
  std::optional<double> relative_l2_cost;
  // (time, energy distance) pairs, e.g. at t = 0.25, 0.5, 0.75.
  std::vector<std::pair<double, double>> marginal_distances;
  std::optional<double> burgers_residual;
  std::optional<long> monotone_violations;
};

// Stable key names and ordering: straightness, crossing_v, cost_l2sq,
// cost_l1, cost_p15, relative_l2_cost, marginal_t025, marginal_t05,
// marginal_t075, burgers_residual, monotone_violations. Unset fields are
// omitted.
nlohmann::ordered_json report_to_json(const MetricsReport& r);

}  // namespace rectflow
