#include "rectflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <utility>

namespace rectflow {

namespace {

std::shared_ptr<const VelocityField> fit_velocity(
    const Coupling& pairs, const RectifyOptions& opt, Rng& rng,
    std::vector<std::pair<int, double>>* curve) {
  const bool linear = opt.schedule.kind() == ScheduleKind::Linear;
  if (std::holds_alternative<ExactBackend>(opt.backend)) {
    if (!linear) {
      throw std::invalid_argument(
          "exact velocity backend requires the linear schedule");
    }
    const auto& b = std::get<ExactBackend>(opt.backend);
    return std::make_shared<ExactVelocity>(pairs.right, b.sigma0);
  }
  if (std::holds_alternative<KnnBackend>(opt.backend)) {
    if (!linear) {
      throw std::invalid_argument(
          "knn velocity backend requires the linear schedule");
    }
    const auto& b = std::get<KnnBackend>(opt.backend);
    return std::make_shared<KernelVelocity>(pairs, b.bandwidth, b.knn_m);
  }
  const auto& b = std::get<MlpBackend>(opt.backend);
  TrainResult tr = train_velocity(pairs, opt.schedule, b.train, rng,
                                  b.feature ? &*b.feature : nullptr);
  *curve = std::move(tr.curve);
  return std::make_shared<MlpField>(std::move(tr.net));
}

// Index of the recorded time closest to t_query, restricted to interior
// times; -1 when the trajectory has no interior record.
std::ptrdiff_t nearest_interior(const std::vector<double>& times,
                                double t_query) {
  std::ptrdiff_t best = -1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::ptrdiff_t i = 0; i < std::ssize(times); ++i) {
    if (times[i] <= 0.0 || times[i] >= 1.0) continue;
    const double gap = std::abs(times[i] - t_query);
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return best;
}

MetricsReport snapshot_metrics(const Coupling& input_pairs,
                               const VelocityField& field,
                               const TrajectoryEnsemble& traj,
                               const RectifyOptions& opt) {
  const MetricsConfig& cfg = opt.metrics;
  MetricsReport out;

  Coupling induced{traj.initial(), traj.final_state()};

  if (cfg.straightness && traj.times.size() >= 2) {
    out.straightness = straightness(traj);
  }
  if (cfg.crossing) {
    out.crossing_v = crossing_v(input_pairs, field, cfg.crossing_time_samples);
  }
  if (cfg.costs) {
    out.cost_l2sq = transport_cost(induced, ConvexCost::sq_norm());
    out.cost_l1 = transport_cost(induced, ConvexCost::norm());
    out.cost_p15 = transport_cost(induced, ConvexCost::pow_norm(1.5));
  }
  if (cfg.relative_cost) {
    const Eigen::Index k = std::min(induced.size(), cfg.assignment_n);
    Coupling head{induced.left.topRows(k), induced.right.topRows(k)};
    out.relative_l2_cost = relative_l2_cost(head, k);
  }
  if (cfg.marginals) {
    for (double t_query : cfg.marginal_times) {
      const std::ptrdiff_t idx = nearest_interior(traj.times, t_query);
      if (idx < 0) continue;
      const double t_rec = traj.times[static_cast<size_t>(idx)];
      const Eigen::Index m = std::min(
          {cfg.marginal_n, induced.size(), input_pairs.size()});
      PointCloud simulated =
          traj.states[static_cast<size_t>(idx)].topRows(m);
      PointCloud reference =
          interpolate_rows(opt.schedule, input_pairs.right.topRows(m),
                           input_pairs.left.topRows(m), t_rec)
              .first;
      out.marginal_distances.emplace_back(
          t_rec, energy_distance(simulated, reference));
    }
  }
  if (cfg.burgers && !cfg.burgers_times.empty()) {
    const Eigen::Index k = std::min<Eigen::Index>(cfg.burgers_probes,
                                                  induced.size());
    out.burgers_residual =
        burgers_residual(field, induced.left.topRows(k), cfg.burgers_times);
  }
  if (cfg.monotone && induced.dim() == 1) {
    out.monotone_violations = monotone_violations(induced);
  }
  return out;
}

}  // namespace

RectifyResult rectify_once(const Coupling& pairs, const RectifyOptions& opt,
                           Rng& rng, const PointCloud* eval_sources) {
  pairs.validate();
  if (eval_sources) {
    check_finite(*eval_sources, "eval_sources");
    if (eval_sources->cols() != pairs.dim() || eval_sources->rows() < 1) {
      throw std::invalid_argument(
          "eval_sources must be a nonempty cloud matching the coupling dim");
    }
  }

  RectifyResult result;
  result.velocity = fit_velocity(pairs, opt, rng, &result.training_curve);

  SolverSpec metrics_spec = opt.solver;
  metrics_spec.direction = SolverSpec::Direction::Forward;
  const bool need_path = opt.metrics.straightness || opt.metrics.marginals;
  if (need_path && metrics_spec.record_every < 1) metrics_spec.record_every = 1;

  const PointCloud& metrics_start = eval_sources ? *eval_sources : pairs.left;
  result.trajectories = integrate(*result.velocity, metrics_start, metrics_spec);
  result.coupling =
      Coupling{result.trajectories.initial(), result.trajectories.final_state()};

  if (eval_sources) {
    SolverSpec chain_spec = opt.solver;
    chain_spec.direction = SolverSpec::Direction::Forward;
    chain_spec.record_every = 0;
    TrajectoryEnsemble chain =
        integrate(*result.velocity, pairs.left, chain_spec);
    result.next_coupling = Coupling{pairs.left, chain.final_state()};
  } else {
    result.next_coupling = result.coupling;
  }

  result.metrics =
      snapshot_metrics(pairs, *result.velocity, result.trajectories, opt);
  return result;
}

std::vector<RectifyResult> reflow(const Coupling& pairs, int rounds,
                                  const RectifyOptions& opt, Rng& rng,
                                  const PointCloud* eval_sources) {
  if (rounds < 1) throw std::invalid_argument("reflow needs rounds >= 1");
  std::vector<RectifyResult> out;
  out.reserve(static_cast<size_t>(rounds));
  Coupling current = pairs;
  for (int k = 0; k < rounds; ++k) {
    out.push_back(rectify_once(current, opt, rng, eval_sources));
    current = out.back().next_coupling;
  }
  return out;
}

TrainResult distill(const Coupling& flow_coupling, const TrainConfig& cfg,
                    Rng& rng) {
  return distill_one_step(flow_coupling, cfg, rng);
}

}  // namespace rectflow
