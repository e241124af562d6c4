#pragma once

// One rectification round: fit a velocity field to a coupling, transport the
// source samples along its flow, and report the induced coupling plus a
// metrics snapshot. Reflow chains rounds; distillation compresses a round's
// coupling into a one-step map.

#include "rectflow/metrics.hpp"
#include "rectflow/ode.hpp"
#include "rectflow/schedules.hpp"
#include "rectflow/velocity_exact.hpp"
#include "rectflow/velocity_kernel.hpp"
#include "rectflow/velocity_neural.hpp"

#include <memory>
#include <optional>
#include <variant>
#include <vector>

namespace rectflow {

// Exact backend: source N(0, sigma0^2 I), targets = pairs.right atoms.
struct ExactBackend {
  double sigma0 = 1.0;
};

struct KnnBackend {
  double bandwidth = 1.0;
  Eigen::Index knn_m = 100;
};

struct MlpBackend {
  TrainConfig train;
  std::optional<FeatureMap> feature;
};

// The exact and knn backends realize the straight-line interpolation only;
// pairing them with another schedule is a validation error.
using BackendSpec = std::variant<ExactBackend, KnnBackend, MlpBackend>;

struct MetricsConfig {
  bool straightness = true;
  bool crossing = true;
  bool costs = true;
  bool relative_cost = true;
  bool marginals = true;
  bool burgers = true;
  bool monotone = true;  // applies only when dim == 1

  int crossing_time_samples = 64;
  Eigen::Index assignment_n = 1024;  // leading rows used for relative_l2_cost
  Eigen::Index marginal_n = 2000;    // leading rows used per marginal test
  std::vector<double> marginal_times = {0.25, 0.5, 0.75};
  Eigen::Index burgers_probes = 64;
  std::vector<double> burgers_times = {0.25, 0.5, 0.75};
};

struct RectifyOptions {
  BackendSpec backend;
  Schedule schedule = Schedule::linear();
  SolverSpec solver;  // direction is forced forward
  MetricsConfig metrics;
};

struct RectifyResult {
  std::shared_ptr<const VelocityField> velocity;
  std::vector<std::pair<int, double>> training_curve;  // mlp backend only

  // Coupling/trajectories of the metrics simulation (held-out sources when
  // the caller provided them, else the training sources).
  Coupling coupling;
  TrajectoryEnsemble trajectories;

  // Coupling used to seed the next reflow round: the training source pool
  // re-simulated under this round's flow. Identical to `coupling` when no
  // held-out sources were given.
  Coupling next_coupling;

  MetricsReport metrics;
};

// Fits on `pairs`, simulates forward, snapshots metrics. crossing_v in the
// report measures the *input* coupling against the fitted field (that is the
// quantity the cost-decomposition identity needs); all other entries describe
// the induced coupling/flow.
RectifyResult rectify_once(const Coupling& pairs, const RectifyOptions& opt,
                           Rng& rng, const PointCloud* eval_sources = nullptr);

// `rounds` >= 1 rectifications, feeding each round's re-simulated training
// coupling into the next fit. With rounds = 1 this is exactly rectify_once.
std::vector<RectifyResult> reflow(const Coupling& pairs, int rounds,
                                  const RectifyOptions& opt, Rng& rng,
                                  const PointCloud* eval_sources = nullptr);

// Trains the one-step map z -> z + v(z, 0) against a simulated flow coupling
// (typically RectifyResult::coupling).
TrainResult distill(const Coupling& flow_coupling, const TrainConfig& cfg,
                    Rng& rng);

}  // namespace rectflow
