#pragma once

// Ensemble ODE integration for velocity fields on t in [0, 1].
//
// Euler uses the uniform grid {0, 1/N, ..., (N-1)/N} and never evaluates the
// field at t = 1, so it is safe for backends that blow up there. Backward
// Euler runs reuse the forward machinery through time reflection and sample
// the field at t = 1 - (j+1)/N, again avoiding t = 1.
//
// Rk45 is Dormand-Prince 5(4) with a single adaptive step sequence shared by
// the whole ensemble (the controller is driven by the worst per-particle
// scaled error norm). Its stages do evaluate at the interval endpoints, so it
// requires a field defined at t = 1; the exact/kernel backends intentionally
// raise their domain error if used there.

#include "rectflow/velocity.hpp"

#include <vector>

namespace rectflow {

struct SolverSpec {
  enum class Kind { Euler, Rk45 };
  enum class Direction { Forward, Backward };

  Kind kind = Kind::Euler;
  Direction direction = Direction::Forward;
  int euler_steps = 100;
  double rtol = 1e-5;
  double atol = 1e-5;
  long max_evals = 1000000;  // rk45 field evaluations per particle
  // 0 records endpoints only; k > 0 records every k-th (accepted) step plus
  // both endpoints.
  int record_every = 0;
};

struct TrajectoryEnsemble {
  std::vector<double> times;       // strictly increasing; 0 and 1 for full runs
  std::vector<PointCloud> states;  // one cloud per recorded time
  long evals_used = 0;             // exact field evaluations per particle

  const PointCloud& initial() const { return states.front(); }
  const PointCloud& final_state() const { return states.back(); }
};

// Integrates every row of `start` from t=0 to t=1 (or the reflected problem
// for backward runs, in which case `start` is the t=1 state and the returned
// trajectory is reported in original time, ascending from the reconstructed
// t=0 state). Throws std::runtime_error on divergence, step failure, or
// blowing the eval budget.
TrajectoryEnsemble integrate(const VelocityField& v, const PointCloud& start,
                             const SolverSpec& spec);

// Forward then backward; returns the largest per-particle Euclidean distance
// between the reconstructed and original start points.
double roundtrip(const VelocityField& v, const PointCloud& start,
                 SolverSpec spec);

}  // namespace rectflow
