// Acceptance gate: twelve numbered end-to-end checks, each printing a single
// [PASS]/[FAIL] line with the measured quantities and its wall time. Run one
// with --criterion <k> or all with no arguments. Exit status is nonzero if
// any selected check fails.

#include "rectflow/experiment.hpp"
#include "rectflow/pipeline.hpp"
#include "support/analytic_fields.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

using namespace rectflow;
namespace rt = rectflow::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

fs::path scratch_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() /
               ("rectflow_acceptance_" + std::to_string(::getpid())) / leaf;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

// Mean and standard error of a per-sample statistic.
std::pair<double, double> mean_se(const Eigen::VectorXd& samples) {
  const double n = static_cast<double>(samples.size());
  const double mean = samples.mean();
  const double var = (samples.array() - mean).square().sum() / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

Eigen::VectorXd cost_samples(const Coupling& c, double p) {
  Eigen::VectorXd norms = (c.right - c.left).rowwise().norm();
  return norms.array().pow(p);
}

ExperimentConfig preset_with(const std::string& name,
                             const std::function<void(nlohmann::ordered_json&)>& edit) {
  nlohmann::ordered_json j = preset_config(name);
  if (edit) edit(j);
  return parse_config(j);
}

RectifyOptions options_of(const ExperimentConfig& cfg) {
  RectifyOptions opt;
  opt.backend = cfg.backend;
  opt.schedule = cfg.schedule;
  opt.solver = cfg.solver;
  opt.metrics = cfg.metrics;
  return opt;
}

// ---------------------------------------------------------------------------
// 1. One rectification round does not increase any tested convex cost.

Outcome criterion_convex_descent() {
  const std::vector<std::string> presets = {"gauss-to-gauss-1d", "two-dots",
                                            "six-modes"};
  const std::vector<double> powers = {1.0, 2.0, 1.5};
  std::ostringstream detail;
  bool ok = true;

  for (const auto& name : presets) {
    ExperimentConfig cfg = preset_with(name, [](nlohmann::ordered_json& j) {
      j["train_n"] = 2000;
      j["eval_n"] = 2000;
      j["reflow_k"] = 1;
    });
    Rng rng(cfg.seed);
    Coupling train(sample(cfg.source, cfg.train_n, rng),
                   sample(cfg.target, cfg.train_n, rng));
    PointCloud eval_src = sample(cfg.source, cfg.eval_n, rng);
    PointCloud eval_tgt = sample(cfg.target, cfg.eval_n, rng);
    Coupling input(eval_src, eval_tgt);

    RectifyOptions opt = options_of(cfg);
    opt.metrics = MetricsConfig{};
    opt.metrics.straightness = false;
    opt.metrics.crossing = false;
    opt.metrics.relative_cost = false;
    opt.metrics.marginals = false;
    opt.metrics.burgers = false;
    RectifyResult res = rectify_once(train, opt, rng, &eval_src);

    for (double p : powers) {
      auto [flow_mean, flow_se] = mean_se(cost_samples(res.coupling, p));
      auto [in_mean, in_se] = mean_se(cost_samples(input, p));
      const double slack = 2.0 * std::hypot(flow_se, in_se);
      const bool this_ok = flow_mean <= in_mean + slack;
      ok = ok && this_ok;
      if (p == 2.0)
        detail << name << " |.|^2 " << fmt(in_mean) << "->" << fmt(flow_mean)
               << (this_ok ? "" : " VIOLATED") << "; ";
      else if (!this_ok)
        detail << name << " |.|^" << p << " VIOLATED (" << fmt(in_mean) << "->"
               << fmt(flow_mean) << " slack " << fmt(slack) << "); ";
    }
  }
  return {ok, "convex costs never rise across rectification: " + detail.str()};
}

// ---------------------------------------------------------------------------
// 2. Three chained rounds: total straightness-plus-crossing stays within the
//    initial squared transport budget and straightness never increases.

Outcome criterion_telescoping() {
  ExperimentConfig cfg = preset_with("six-modes", nullptr);
  Rng rng(cfg.seed);
  Coupling train(sample(cfg.source, cfg.train_n, rng),
                 sample(cfg.target, cfg.train_n, rng));

  RectifyOptions opt = options_of(cfg);
  opt.metrics.marginals = false;
  opt.metrics.burgers = false;
  auto rounds = reflow(train, 3, opt, rng);

  auto [budget, budget_se] = mean_se(cost_samples(train, 2.0));
  double total = 0.0;
  std::vector<double> s_values;
  for (const auto& r : rounds) {
    total += *r.metrics.straightness + *r.metrics.crossing_v;
    s_values.push_back(*r.metrics.straightness);
  }
  bool monotone = true;
  for (size_t k = 1; k < s_values.size(); ++k)
    monotone = monotone && (s_values[k] <= s_values[k - 1]);
  const bool ok = monotone && total <= budget + 3.0 * budget_se;

  std::ostringstream detail;
  detail << "sum(S+V)=" << fmt(total) << " <= budget " << fmt(budget) << "+3se, S=";
  for (size_t k = 0; k < s_values.size(); ++k)
    detail << (k ? "," : "") << fmt(s_values[k]);
  detail << (monotone ? " (non-increasing)" : " (NOT non-increasing)");
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 3. Flow marginals are statistically indistinguishable from the
//    interpolation marginals at t = 0.25, 0.5, 0.75.

Outcome criterion_marginals() {
  ExperimentConfig cfg = preset_with("gauss-to-two-atoms", nullptr);
  Rng rng(cfg.seed);
  const Eigen::Index n = 2000;
  PointCloud targets = sample(cfg.target, n, rng);
  PointCloud sim_src = sample(cfg.source, n, rng);
  PointCloud ref_src = sample(cfg.source, n, rng);
  PointCloud ref_tgt = sample(cfg.target, n, rng);

  ExactVelocity field(targets, 1.0);
  SolverSpec spec;
  spec.euler_steps = 1000;
  spec.record_every = 250;  // lands exactly on 0.25, 0.5, 0.75
  TrajectoryEnsemble traj = integrate(field, sim_src, spec);

  bool ok = true;
  std::ostringstream detail;
  detail << "p=";
  bool first = true;
  for (size_t j = 0; j < traj.times.size(); ++j) {
    const double t = traj.times[j];
    if (t != 0.25 && t != 0.5 && t != 0.75) continue;
    PointCloud interp = t * ref_tgt + (1.0 - t) * ref_src;
    Rng perm_rng = rng.split(static_cast<std::uint64_t>(1000.0 * t));
    const double p = energy_perm_pvalue(traj.states[j], interp, 199, perm_rng);
    ok = ok && p > 0.05;
    detail << (first ? "" : "/") << fmt(p);
    first = false;
  }
  detail << " at t=0.25/0.5/0.75 (need > 0.05)";
  return {ok, detail.str()};
}

// ---------------------------------------------------------------------------
// 4. 1D rectification yields the monotone coupling and the affine map.

Outcome criterion_monotone_1d() {
  // Population rectified flow of N(0,1) -> N(2, 0.25): integrate the exact
  // conditional-mean velocity and compare the induced coupling with the
  // affine monotone transport T(x) = 2 + 0.5 x.
  rt::GaussianPair gp{Point::Zero(1), 1.0, Point::Constant(1, 2.0), 0.5};
  auto field = rt::conditional_field(gp);

  Rng rng(44);
  PointCloud start = standard_normal_batch(rng, 500, 1);
  SolverSpec spec;
  spec.euler_steps = 300;
  PointCloud ends = integrate(field, start, spec).final_state();

  const long violations = monotone_violations(Coupling(start, ends));
  double worst = 0.0;
  for (Eigen::Index i = 0; i < start.rows(); ++i) {
    const Point mapped = rt::affine_monotone_map(gp, start.row(i).transpose());
    worst = std::max(worst, std::abs(ends(i, 0) - mapped(0)));
  }
  const bool ok = violations == 0 && worst <= 5e-2;
  return {ok, "violations=" + std::to_string(violations) +
                  "/500 (need 0), max|Z1-T(Z0)|=" + fmt(worst) + " (need <= 0.05)"};
}

// ---------------------------------------------------------------------------
// 5. The drift target assembled through the (eta, sigma^2) route equals the
//    schedule's path derivative.

Outcome criterion_drift_identity() {
  Rng rng(5150);
  const std::vector<Schedule> schedules = {Schedule::linear(), Schedule::vp(),
                                           Schedule::sub_vp(), Schedule::ve(4.0)};
  double worst = 0.0;
  for (const auto& s : schedules) {
    for (int trial = 0; trial < 1000; ++trial) {
      Point x1(3), xi(3);
      for (int j = 0; j < 3; ++j) {
        x1(j) = rng.normal();
        xi(j) = rng.normal();
      }
      const double t = 0.01 + 0.98 * rng.uniform();
      const auto e = s.eval(t);
      const Point direct = e.alpha_dot * x1 + e.beta_dot * xi;
      worst = std::max(worst, (pfode_target(s, x1, xi, t) - direct).norm());
    }
  }
  return {worst <= 1e-6,
          "max drift-vs-derivative gap " + fmt(worst) + " over 4 schedules x 1000 "
          "draws (need <= 1e-6)"};
}

// ---------------------------------------------------------------------------
// 6. One Euler step collapses to the target mean; two steps already resolve
//    the atoms far better.

Outcome criterion_mean_collapse() {
  Rng rng(66);
  PointCloud atoms(2, 1);
  atoms << -8.0, 8.0;
  PointCloud targets(1000, 1);
  for (Eigen::Index i = 0; i < targets.rows(); ++i)
    targets(i, 0) = atoms(static_cast<Eigen::Index>(rng.below(2)), 0);
  const double target_mean = targets.mean();

  ExactVelocity field(targets, 1.0);
  PointCloud start = standard_normal_batch(rng, 500, 1);

  SolverSpec one;
  one.euler_steps = 1;
  PointCloud end1 = integrate(field, start, one).final_state();
  const double worst =
      (end1.array() - target_mean).abs().maxCoeff();

  SolverSpec two;
  two.euler_steps = 2;
  PointCloud end2 = integrate(field, start, two).final_state();
  const double ed1 = energy_distance(end1, targets);
  const double ed2 = energy_distance(end2, targets);
  const bool ok = worst <= 1e-8 && ed2 * 10.0 <= ed1;
  return {ok, "1-step endpoints sit on the mean within " + fmt(worst) +
                  " (need <= 1e-8); endpoint energy distance " + fmt(ed1) +
                  " -> " + fmt(ed2) + " (need >= 10x drop)"};
}

// ---------------------------------------------------------------------------
// 7. Straight-line training beats the vp-shaped schedule at tiny step counts
//    and every schedule passes the distribution test at 100 steps.

Outcome criterion_schedule_ordering() {
  ExperimentConfig cfg = preset_with("gauss-to-mixture", nullptr);
  const fs::path out = scratch_dir("schedule_compare");
  auto rows = compare_schedules(cfg, out.string());

  auto find = [&rows](const std::string& sched, int n) -> const ScheduleSweepRow& {
    for (const auto& r : rows)
      if (r.schedule == sched && r.n_steps == n) return r;
    throw std::runtime_error("missing sweep row " + sched);
  };

  bool ordering = true;
  std::ostringstream detail;
  for (int n : {1, 2, 5}) {
    const double lin = find("linear", n).energy_distance;
    const double vp = find("vp", n).energy_distance;
    ordering = ordering && lin < vp;
    detail << "N=" << n << " linear " << fmt(lin) << (lin < vp ? " < " : " >= ")
           << "vp " << fmt(vp) << "; ";
  }
  bool all_pass = true;
  detail << "p(N=100)=";
  for (size_t i = 0; i < cfg.schedule_names.size(); ++i) {
    const auto& r = find(cfg.schedule_names[i], 100);
    all_pass = all_pass && r.p_value > 0.05;
    detail << (i ? "/" : "") << r.schedule << ":" << fmt(r.p_value);
  }
  detail << " (need all > 0.05)";
  return {ordering && all_pass, detail.str()};
}

// ---------------------------------------------------------------------------
// 8. Backprop gradients are exact against central finite differences.

Outcome criterion_gradients() {
  Rng rng(88);
  Mlp net = Mlp::random_init({3, 64, 64, 2}, rng);
  TrainConfig tc;
  tc.l2_penalty = 1e-4;

  double worst = 0.0;
  long checked = 0;
  for (int batch_id = 0; batch_id < 5; ++batch_id) {
    PointCloud x0 = standard_normal_batch(rng, 16, 2);
    PointCloud x1 = standard_normal_batch(rng, 16, 2).array() + 1.0;
    Coupling batch(x0, x1);
    std::vector<double> times(16);
    for (auto& t : times) t = rng.uniform();

    auto [loss, grads] = loss_and_grad(net, batch, times, tc);
    (void)loss;
    const double h = 1e-6;
    auto probe = [&](double* param, double analytic) {
      const double saved = *param;
      *param = saved + h;
      const double up = loss_and_grad(net, batch, times, tc).first;
      *param = saved - h;
      const double down = loss_and_grad(net, batch, times, tc).first;
      *param = saved;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic - fd) / (std::abs(fd) + 1e-8));
      ++checked;
    };
    for (size_t l = 0; l < net.weights.size(); ++l) {
      for (Eigen::Index i = 0; i < net.weights[l].size(); ++i)
        probe(net.weights[l].data() + i, grads.weights[l](i));
      for (Eigen::Index i = 0; i < net.biases[l].size(); ++i)
        probe(net.biases[l].data() + i, grads.biases[l](i));
    }
  }
  return {worst <= 1e-4, "worst relative gradient error " + fmt(worst) + " over " +
                             std::to_string(checked) + " parameter checks "
                             "(need <= 1e-4)"};
}

// ---------------------------------------------------------------------------
// 9. The assignment solver is exact and the derived relative cost is never
//    meaningfully negative.

Outcome criterion_assignment() {
  Rng rng(99);
  double worst_gap = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::MatrixXd cost(8, 8);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) cost(i, j) = 10.0 * rng.uniform();

    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double total = 0.0;
      for (int i = 0; i < 8; ++i) total += cost(i, perm[static_cast<size_t>(i)]);
      best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));

    worst_gap = std::max(worst_gap,
                         std::abs(hungarian_assignment(cost).total_cost - best));
  }

  double most_negative = 0.0;
  for (const auto& name : preset_names()) {
    ExperimentConfig cfg = preset_with(name, nullptr);
    Rng prng(cfg.seed);
    const Eigen::Index n = std::min<Eigen::Index>(cfg.train_n, 1024);
    Coupling input(sample(cfg.source, n, prng), sample(cfg.target, n, prng));
    most_negative = std::min(most_negative, relative_l2_cost(input));
  }
  const bool ok = worst_gap <= 1e-10 && most_negative >= -1e-9;
  return {ok, "max |solver - brute force| " + fmt(worst_gap) +
                  " over 1000 8x8 instances; most negative relative cost " +
                  fmt(most_negative) + " across presets (need >= -1e-9)"};
}

// ---------------------------------------------------------------------------
// 10. Fixed-step and adaptive solvers agree, and the fixed-step error decays
//     at first order.

Outcome criterion_solvers() {
  rt::GaussianPair gp{Point::Zero(2), 1.0, Point::Constant(2, 2.0), 0.7};
  auto field = rt::conditional_field(gp);
  Rng rng(1010);
  PointCloud start = standard_normal_batch(rng, 50, 2);

  SolverSpec euler;
  euler.euler_steps = 10000;
  SolverSpec rk;
  rk.kind = SolverSpec::Kind::Rk45;
  rk.rtol = 1e-8;
  rk.atol = 1e-10;
  const double gap = (integrate(field, start, euler).final_state() -
                      integrate(field, start, rk).final_state())
                         .rowwise()
                         .norm()
                         .maxCoeff();

  PointCloud exact(start.rows(), 2);
  for (Eigen::Index i = 0; i < start.rows(); ++i)
    exact.row(i) = rt::affine_monotone_map(gp, start.row(i).transpose()).transpose();
  auto max_err = [&](int n) {
    SolverSpec s;
    s.euler_steps = n;
    return (integrate(field, start, s).final_state() - exact)
        .rowwise()
        .norm()
        .maxCoeff();
  };
  const double order = std::log2(max_err(256) / max_err(512));
  const bool ok = gap <= 1e-3 && order >= 0.8 && order <= 1.2;
  return {ok, "solver endpoint gap " + fmt(gap) + " (need <= 1e-3); measured "
              "convergence order " + fmt(order) + " (need within 1 +- 0.2)"};
}

// ---------------------------------------------------------------------------
// 11. Flowing the source through an atomic target's field lands every
//     particle on an atom.

Outcome criterion_data_recovery() {
  PointCloud atoms(8, 2);
  for (int k = 0; k < 8; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / 8.0;
    atoms(k, 0) = 6.0 * std::cos(angle);
    atoms(k, 1) = 6.0 * std::sin(angle);
  }
  ExactVelocity field(atoms, 1.0);
  Rng rng(1111);
  const double worst = data_recovery_check(field, 500, 1000, rng);
  return {worst <= 1e-3, "max distance from a final particle to its nearest atom " +
                             fmt(worst) + " (need <= 1e-3)"};
}

// ---------------------------------------------------------------------------
// 12. Rerunning a preset with the same seed reproduces metrics.json byte for
//     byte.

Outcome criterion_determinism() {
  ExperimentConfig cfg = preset_with("two-dots", nullptr);
  const fs::path out_a = scratch_dir("determinism_a");
  const fs::path out_b = scratch_dir("determinism_b");
  RunResult a = run_experiment(cfg, out_a.string());
  RunResult b = run_experiment(cfg, out_b.string());

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string file_a = slurp(out_a / "metrics.json");
  const std::string file_b = slurp(out_b / "metrics.json");
  const bool ok = !file_a.empty() && file_a == file_b &&
                  a.metrics_json.dump() == b.metrics_json.dump();
  return {ok, ok ? "metrics.json identical across reruns (" +
                       std::to_string(file_a.size()) + " bytes)"
                 : "metrics.json differs across reruns"};
}

struct Criterion {
  int id;
  const char* label;
  double time_limit_s;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "convex-cost descent", 180.0, criterion_convex_descent},
    {2, "telescoping straightening bound", 300.0, criterion_telescoping},
    {3, "marginal preservation", 60.0, criterion_marginals},
    {4, "1D monotone rectification", 30.0, criterion_monotone_1d},
    {5, "drift target identity", 1.0, criterion_drift_identity},
    {6, "single-step mean collapse", 10.0, criterion_mean_collapse},
    {7, "schedule ordering", 300.0, criterion_schedule_ordering},
    {8, "gradient exactness", 10.0, criterion_gradients},
    {9, "assignment exactness", 30.0, criterion_assignment},
    {10, "solver consistency", 60.0, criterion_solvers},
    {11, "data recovery", 30.0, criterion_data_recovery},
    {12, "determinism", 60.0, criterion_determinism},
};

bool run_one(const Criterion& c) {
  const auto start = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    outcome = c.run();
  } catch (const std::exception& e) {
    outcome = {false, std::string("exception: ") + e.what()};
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  const bool in_time = elapsed <= c.time_limit_s;
  const bool pass = outcome.pass && in_time;
  std::printf("[%s] C%d %s: %s [%.1fs%s]\n", pass ? "PASS" : "FAIL", c.id,
              c.label, outcome.detail.c_str(), elapsed,
              in_time ? "" : " OVER TIME LIMIT");
  std::fflush(stdout);
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  int selected = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected = std::atoi(argv[++i]);
    } else if (arg == "--help") {
      std::printf("usage: acceptance [--criterion N]   (N in 1..12; default all)\n");
      return 0;
    } else {
      std::fprintf(stderr, "unknown argument '%s'\n", arg.c_str());
      return 2;
    }
  }
  if (selected < 0 || selected > 12) {
    std::fprintf(stderr, "criterion must be in 1..12\n");
    return 2;
  }

  bool all_pass = true;
  for (const auto& c : kCriteria)
    if (selected == 0 || c.id == selected) all_pass = all_pass && run_one(c);
  return all_pass ? 0 : 1;
}
