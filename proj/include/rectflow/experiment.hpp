#pragma once

// Reproducible experiment driver: JSON config parsing, named toy presets,
// full rectify/reflow runs, schedule and L2-penalty sweeps, and CSV/JSON
// artifact emission. Everything is computed before anything is written, so a
// failing run leaves no partial files.

#include "rectflow/distributions.hpp"
#include "rectflow/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rectflow {

// Config problems (unknown keys, invalid parameters, malformed files). The
// CLI maps this to exit code 1; numeric failures during a run (training
// divergence, solver blowup) surface as std::runtime_error and map to 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Eigen::Index train_n = 2000;
  Eigen::Index eval_n = 2000;
  int reflow_rounds = 1;

  DistributionSpec source;
  DistributionSpec target;
  Schedule schedule = Schedule::linear();
  BackendSpec backend;
  SolverSpec solver;
  MetricsConfig metrics;

  // Sweep inputs (compare-schedules / l2-sweep subcommands).
  std::vector<std::string> schedule_names;
  std::vector<int> euler_steps_list;
  std::vector<double> lambdas;

  // Canonical resolved config (what config_echo.json contains, minus the
  // hash and rng identifiers) and its FNV-1a 64 hash in hex.
  nlohmann::ordered_json echo;
  std::string config_hash;
};

// Full config for a named toy preset; throws ValidationError for unknown
// names. Matching is exact first, then case-insensitive.
nlohmann::ordered_json preset_config(const std::string& name);
std::vector<std::string> preset_names();

// Parses and validates; throws ValidationError on any problem, including
// unknown keys. The input must be a JSON object.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_file(const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);

struct RunResult {
  // rounds[0] snapshots the independent input coupling (costs only);
  // rounds[k] for k >= 1 is the k-th rectification.
  std::vector<MetricsReport> rounds;
  nlohmann::ordered_json metrics_json;
  std::vector<std::string> files_written;
};

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct ScheduleSweepRow {
  std::string schedule;
  int n_steps = 0;
  double energy_distance = 0.0;
  double p_value = 0.0;
  double straightness = 0.0;
  double relative_l2_cost = 0.0;
};

// Trains one velocity per schedule name (mlp backend required), simulates an
// Euler run per step count, and writes schedule_compare.csv.
std::vector<ScheduleSweepRow> compare_schedules(const ExperimentConfig& cfg,
                                                const std::string& out_dir);

struct L2SweepRow {
  double lambda = 0.0;
  double straightness = 0.0;
  double cost_l2sq = 0.0;
  double energy_distance = 0.0;
};

// One trained flow per l2 penalty (mlp backend required); writes l2_sweep.csv.
std::vector<L2SweepRow> l2_penalty_sweep(const ExperimentConfig& cfg,
                                         const std::string& out_dir);

// Reads a couplings.csv produced by run_experiment and recomputes the
// coupling-level metrics (costs, relative cost, monotonicity in 1D); writes
// metrics.json into out_dir.
MetricsReport recompute_metrics(const std::string& couplings_csv,
                                const std::string& out_dir);

// Parses the z0_*/z1_* column layout (comment lines starting with '#' are
// skipped). Exposed for tests.
Coupling read_couplings_csv(const std::string& path);

}  // namespace rectflow
