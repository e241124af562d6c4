#include "rectflow/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string_view>
#include <utility>
#include <variant>

namespace rectflow {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& ctx) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || item.key() == a;
    if (!ok) fail("unknown key '" + item.key() + "' in " + ctx);
  }
}

double get_num(const json& j, const std::string& ctx) {
  if (!j.is_number()) fail(ctx + " must be a number");
  return j.get<double>();
}

double opt_num(const json& j, const char* key, double dflt, const std::string& ctx) {
  return j.contains(key) ? get_num(j.at(key), ctx + "." + key) : dflt;
}

long opt_int(const json& j, const char* key, long dflt, const std::string& ctx) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_number_integer()) fail(ctx + "." + key + " must be an integer");
  return j.at(key).get<long>();
}

bool opt_bool(const json& j, const char* key, bool dflt, const std::string& ctx) {
  if (!j.contains(key)) return dflt;
  if (!j.at(key).is_boolean()) fail(ctx + "." + key + " must be a boolean");
  return j.at(key).get<bool>();
}

std::string req_str(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j.at(key).is_string())
    fail(ctx + "." + key + " must be a string");
  return j.at(key).get<std::string>();
}

Eigen::VectorXd parse_vector(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.empty()) fail(ctx + " must be a nonempty array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = get_num(j[i], ctx + " entry");
  }
  return v;
}

std::vector<double> parse_times(const json& j, const std::string& ctx) {
  if (!j.is_array()) fail(ctx + " must be an array");
  std::vector<double> out;
  for (const auto& e : j) {
    const double t = get_num(e, ctx + " entry");
    if (!(t > 0.0 && t < 1.0)) fail(ctx + " entries must lie strictly in (0, 1)");
    out.push_back(t);
  }
  return out;
}

ojson vec_json(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// ---------------------------------------------------------------------------
// Distributions

DiagonalGaussian parse_gaussian(const json& j, const std::string& ctx) {
  check_keys(j, {"type", "mean", "stddev"}, ctx);
  if (!j.contains("mean")) fail(ctx + ".mean is required");
  DiagonalGaussian g;
  g.mean = parse_vector(j.at("mean"), ctx + ".mean");
  if (!j.contains("stddev")) {
    g.stddev = Eigen::VectorXd::Ones(g.mean.size());
  } else if (j.at("stddev").is_number()) {
    g.stddev = Eigen::VectorXd::Constant(g.mean.size(),
                                         j.at("stddev").get<double>());
  } else {
    g.stddev = parse_vector(j.at("stddev"), ctx + ".stddev");
  }
  return g;
}

DistributionSpec parse_dist(const json& j, const std::string& ctx) {
  if (!j.is_object()) fail(ctx + " must be an object");
  const std::string type = req_str(j, "type", ctx);
  if (type == "gaussian") return parse_gaussian(j, ctx);
  if (type == "mixture") {
    check_keys(j, {"type", "weights", "components"}, ctx);
    GaussianMixture m;
    if (!j.contains("weights") || !j.contains("components"))
      fail(ctx + " mixture needs weights and components");
    const Eigen::VectorXd w = parse_vector(j.at("weights"), ctx + ".weights");
    m.weights.assign(w.data(), w.data() + w.size());
    if (!j.at("components").is_array() || j.at("components").empty())
      fail(ctx + ".components must be a nonempty array");
    for (const auto& c : j.at("components")) {
      if (!c.is_object() || c.value("type", "gaussian") != std::string("gaussian"))
        fail(ctx + ".components entries must be gaussian objects");
      m.components.push_back(parse_gaussian(c, ctx + ".components"));
    }
    return m;
  }
  if (type == "empirical") {
    check_keys(j, {"type", "points"}, ctx);
    if (!j.contains("points") || !j.at("points").is_array() || j.at("points").empty())
      fail(ctx + ".points must be a nonempty array of rows");
    const auto& rows = j.at("points");
    Eigen::VectorXd first = parse_vector(rows[0], ctx + ".points row");
    Empirical e;
    e.points.resize(static_cast<Eigen::Index>(rows.size()), first.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Eigen::VectorXd r = parse_vector(rows[i], ctx + ".points row");
      if (r.size() != first.size()) fail(ctx + ".points rows must share a length");
      e.points.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return e;
  }
  if (type == "uniform-box") {
    check_keys(j, {"type", "lo", "hi"}, ctx);
    if (!j.contains("lo") || !j.contains("hi")) fail(ctx + " box needs lo and hi");
    UniformBox b;
    b.lo = parse_vector(j.at("lo"), ctx + ".lo");
    b.hi = parse_vector(j.at("hi"), ctx + ".hi");
    return b;
  }
  fail(ctx + ".type must be gaussian, mixture, empirical, or uniform-box");
}

ojson dist_json(const DistributionSpec& spec) {
  ojson out;
  if (const auto* g = std::get_if<DiagonalGaussian>(&spec)) {
    out["type"] = "gaussian";
    out["mean"] = vec_json(g->mean);
    out["stddev"] = vec_json(g->stddev);
  } else if (const auto* m = std::get_if<GaussianMixture>(&spec)) {
    out["type"] = "mixture";
    out["weights"] = m->weights;
    ojson comps = ojson::array();
    for (const auto& c : m->components) {
      ojson cj;
      cj["type"] = "gaussian";
      cj["mean"] = vec_json(c.mean);
      cj["stddev"] = vec_json(c.stddev);
      comps.push_back(cj);
    }
    out["components"] = comps;
  } else if (const auto* e = std::get_if<Empirical>(&spec)) {
    out["type"] = "empirical";
    ojson rows = ojson::array();
    for (Eigen::Index i = 0; i < e->points.rows(); ++i)
      rows.push_back(vec_json(e->points.row(i).transpose()));
    out["points"] = rows;
  } else {
    const auto& b = std::get<UniformBox>(spec);
    out["type"] = "uniform-box";
    out["lo"] = vec_json(b.lo);
    out["hi"] = vec_json(b.hi);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Schedule / backend / solver / metrics sections

Schedule parse_schedule(const json& j, const std::string& ctx) {
  try {
    if (j.is_string()) return schedule_from_name(j.get<std::string>());
    if (!j.is_object()) fail(ctx + " must be a name or an object");
    const std::string name = req_str(j, "name", ctx);
    if (name == "linear") {
      check_keys(j, {"name"}, ctx);
      return Schedule::linear();
    }
    if (name == "vp" || name == "sub-vp") {
      check_keys(j, {"name", "a", "b"}, ctx);
      const double a = opt_num(j, "a", 19.9, ctx);
      const double b = opt_num(j, "b", 0.1, ctx);
      return name == "vp" ? Schedule::vp(a, b) : Schedule::sub_vp(a, b);
    }
    if (name == "ve") {
      check_keys(j, {"name", "sigma_max", "sigma_min"}, ctx);
      return Schedule::ve(opt_num(j, "sigma_max", 10.0, ctx),
                          opt_num(j, "sigma_min", 0.01, ctx));
    }
    if (name == "const-speed-vp") {
      check_keys(j, {"name"}, ctx);
      return Schedule::const_speed_vp();
    }
    if (name == "power") {
      check_keys(j, {"name", "gamma"}, ctx);
      return Schedule::straight_power_reparam(opt_num(j, "gamma", 2.0, ctx));
    }
    fail(ctx + ".name: unknown schedule '" + name + "'");
  } catch (const std::invalid_argument& e) {
    fail(ctx + ": " + e.what());
  }
}

ojson schedule_json(const Schedule& s) {
  ojson out;
  switch (s.kind()) {
    case ScheduleKind::Linear:
      out["name"] = "linear";
      break;
    case ScheduleKind::Vp:
    case ScheduleKind::SubVp:
      out["name"] = s.kind() == ScheduleKind::Vp ? "vp" : "sub-vp";
      out["a"] = s.param_a();
      out["b"] = s.param_b();
      break;
    case ScheduleKind::Ve:
      out["name"] = "ve";
      out["sigma_max"] = s.param_a();
      out["sigma_min"] = s.param_b();
      break;
    case ScheduleKind::ConstSpeedVp:
      out["name"] = "const-speed-vp";
      break;
    case ScheduleKind::StraightReparam:
      out["name"] = "power";
      out["gamma"] = s.param_a();
      break;
  }
  return out;
}

BackendSpec parse_backend(const json& j, Eigen::Index dim, const std::string& ctx) {
  if (!j.is_object()) fail(ctx + " must be an object");
  const std::string type = req_str(j, "type", ctx);
  if (type == "exact") {
    check_keys(j, {"type", "sigma0"}, ctx);
    ExactBackend b;
    b.sigma0 = opt_num(j, "sigma0", 1.0, ctx);
    if (!(b.sigma0 > 0.0)) fail(ctx + ".sigma0 must be positive");
    return b;
  }
  if (type == "knn") {
    check_keys(j, {"type", "bandwidth", "m"}, ctx);
    KnnBackend b;
    b.bandwidth = opt_num(j, "bandwidth", 1.0, ctx);
    b.knn_m = opt_int(j, "m", 100, ctx);
    if (!(b.bandwidth > 0.0)) fail(ctx + ".bandwidth must be positive");
    if (b.knn_m < 1) fail(ctx + ".m must be >= 1");
    return b;
  }
  if (type == "mlp") {
    check_keys(j,
               {"type", "iterations", "batch_size", "learning_rate", "l2_penalty",
                "time_grid", "ema_decay", "hidden", "activation", "log_every",
                "feature_map"},
               ctx);
    MlpBackend b;
    TrainConfig& t = b.train;
    t.iterations = static_cast<int>(opt_int(j, "iterations", 2000, ctx));
    t.batch_size = static_cast<int>(opt_int(j, "batch_size", 256, ctx));
    t.learning_rate = opt_num(j, "learning_rate", 1e-3, ctx);
    t.l2_penalty = opt_num(j, "l2_penalty", 0.0, ctx);
    t.time_grid = static_cast<int>(opt_int(j, "time_grid", 0, ctx));
    t.ema_decay = opt_num(j, "ema_decay", 0.0, ctx);
    t.log_every = static_cast<int>(opt_int(j, "log_every", 100, ctx));
    if (t.iterations < 1) fail(ctx + ".iterations must be >= 1");
    if (t.batch_size < 1) fail(ctx + ".batch_size must be >= 1");
    if (!(t.learning_rate > 0.0)) fail(ctx + ".learning_rate must be positive");
    if (t.l2_penalty < 0.0) fail(ctx + ".l2_penalty must be >= 0");
    if (t.time_grid < 0) fail(ctx + ".time_grid must be >= 0");
    if (!(t.ema_decay >= 0.0 && t.ema_decay < 1.0))
      fail(ctx + ".ema_decay must lie in [0, 1)");
    if (t.log_every < 1) fail(ctx + ".log_every must be >= 1");
    if (j.contains("hidden")) {
      if (!j.at("hidden").is_array()) fail(ctx + ".hidden must be an array");
      t.hidden.clear();
      for (const auto& e : j.at("hidden")) {
        if (!e.is_number_integer() || e.get<long>() < 1)
          fail(ctx + ".hidden entries must be positive integers");
        t.hidden.push_back(e.get<long>());
      }
    }
    const std::string act = j.contains("activation")
                                ? req_str(j, "activation", ctx)
                                : std::string("tanh");
    if (act == "tanh") {
      t.activation = Activation::Tanh;
    } else if (act == "softplus") {
      t.activation = Activation::Softplus;
    } else {
      fail(ctx + ".activation must be tanh or softplus");
    }
    if (j.contains("feature_map")) {
      const auto& rows = j.at("feature_map");
      if (!rows.is_array() || rows.empty())
        fail(ctx + ".feature_map must be a nonempty array of rows");
      Eigen::MatrixXd h(static_cast<Eigen::Index>(rows.size()), dim);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::VectorXd r = parse_vector(rows[i], ctx + ".feature_map row");
        if (r.size() != dim) fail(ctx + ".feature_map rows must have length dim");
        h.row(static_cast<Eigen::Index>(i)) = r.transpose();
      }
      b.feature = FeatureMap{std::move(h)};
    }
    return b;
  }
  fail(ctx + ".type must be exact, knn, or mlp");
}

ojson backend_json(const BackendSpec& b) {
  ojson out;
  if (const auto* e = std::get_if<ExactBackend>(&b)) {
    out["type"] = "exact";
    out["sigma0"] = e->sigma0;
  } else if (const auto* k = std::get_if<KnnBackend>(&b)) {
    out["type"] = "knn";
    out["bandwidth"] = k->bandwidth;
    out["m"] = k->knn_m;
  } else {
    const auto& m = std::get<MlpBackend>(b);
    out["type"] = "mlp";
    out["iterations"] = m.train.iterations;
    out["batch_size"] = m.train.batch_size;
    out["learning_rate"] = m.train.learning_rate;
    out["l2_penalty"] = m.train.l2_penalty;
    out["time_grid"] = m.train.time_grid;
    out["ema_decay"] = m.train.ema_decay;
    ojson hidden = ojson::array();
    for (auto w : m.train.hidden) hidden.push_back(static_cast<long>(w));
    out["hidden"] = hidden;
    out["activation"] =
        m.train.activation == Activation::Tanh ? "tanh" : "softplus";
    out["log_every"] = m.train.log_every;
    if (m.feature) {
      ojson rows = ojson::array();
      for (Eigen::Index i = 0; i < m.feature->h.rows(); ++i)
        rows.push_back(vec_json(m.feature->h.row(i).transpose()));
      out["feature_map"] = rows;
    }
  }
  return out;
}

SolverSpec parse_solver(const json& j, const std::string& ctx) {
  if (!j.is_object()) fail(ctx + " must be an object");
  const std::string type = j.contains("type") ? req_str(j, "type", ctx)
                                              : std::string("euler");
  SolverSpec s;
  if (type == "euler") {
    check_keys(j, {"type", "steps", "record_every"}, ctx);
    s.kind = SolverSpec::Kind::Euler;
    s.euler_steps = static_cast<int>(opt_int(j, "steps", 100, ctx));
    if (s.euler_steps < 1) fail(ctx + ".steps must be >= 1");
  } else if (type == "rk45") {
    check_keys(j, {"type", "rtol", "atol", "max_evals", "record_every"}, ctx);
    s.kind = SolverSpec::Kind::Rk45;
    s.rtol = opt_num(j, "rtol", 1e-5, ctx);
    s.atol = opt_num(j, "atol", 1e-5, ctx);
    s.max_evals = opt_int(j, "max_evals", 1000000, ctx);
    if (!(s.rtol > 0.0) || !(s.atol > 0.0))
      fail(ctx + ".rtol and .atol must be positive");
    if (s.max_evals < 7) fail(ctx + ".max_evals must be >= 7");
  } else {
    fail(ctx + ".type must be euler or rk45");
  }
  s.record_every = static_cast<int>(opt_int(j, "record_every", 0, ctx));
  if (s.record_every < 0) fail(ctx + ".record_every must be >= 0");
  return s;
}

ojson solver_json(const SolverSpec& s) {
  ojson out;
  if (s.kind == SolverSpec::Kind::Euler) {
    out["type"] = "euler";
    out["steps"] = s.euler_steps;
  } else {
    out["type"] = "rk45";
    out["rtol"] = s.rtol;
    out["atol"] = s.atol;
    out["max_evals"] = s.max_evals;
  }
  out["record_every"] = s.record_every;
  return out;
}

MetricsConfig parse_metrics(const json& j, const std::string& ctx) {
  if (!j.is_object()) fail(ctx + " must be an object");
  check_keys(j,
             {"straightness", "crossing", "costs", "relative_cost", "marginals",
              "burgers", "monotone", "crossing_time_samples", "assignment_n",
              "marginal_n", "marginal_times", "burgers_probes", "burgers_times"},
             ctx);
  MetricsConfig m;
  m.straightness = opt_bool(j, "straightness", m.straightness, ctx);
  m.crossing = opt_bool(j, "crossing", m.crossing, ctx);
  m.costs = opt_bool(j, "costs", m.costs, ctx);
  m.relative_cost = opt_bool(j, "relative_cost", m.relative_cost, ctx);
  m.marginals = opt_bool(j, "marginals", m.marginals, ctx);
  m.burgers = opt_bool(j, "burgers", m.burgers, ctx);
  m.monotone = opt_bool(j, "monotone", m.monotone, ctx);
  m.crossing_time_samples = static_cast<int>(
      opt_int(j, "crossing_time_samples", m.crossing_time_samples, ctx));
  m.assignment_n = opt_int(j, "assignment_n", m.assignment_n, ctx);
  m.marginal_n = opt_int(j, "marginal_n", m.marginal_n, ctx);
  m.burgers_probes = opt_int(j, "burgers_probes", m.burgers_probes, ctx);
  if (m.crossing_time_samples < 1) fail(ctx + ".crossing_time_samples must be >= 1");
  if (m.assignment_n < 1) fail(ctx + ".assignment_n must be >= 1");
  if (m.assignment_n > 2048) fail(ctx + ".assignment_n must be <= 2048");
  if (m.marginal_n < 2) fail(ctx + ".marginal_n must be >= 2");
  if (m.burgers_probes < 1) fail(ctx + ".burgers_probes must be >= 1");
  if (j.contains("marginal_times"))
    m.marginal_times = parse_times(j.at("marginal_times"), ctx + ".marginal_times");
  if (j.contains("burgers_times"))
    m.burgers_times = parse_times(j.at("burgers_times"), ctx + ".burgers_times");
  return m;
}

ojson metrics_json_cfg(const MetricsConfig& m) {
  ojson out;
  out["straightness"] = m.straightness;
  out["crossing"] = m.crossing;
  out["costs"] = m.costs;
  out["relative_cost"] = m.relative_cost;
  out["marginals"] = m.marginals;
  out["burgers"] = m.burgers;
  out["monotone"] = m.monotone;
  out["crossing_time_samples"] = m.crossing_time_samples;
  out["assignment_n"] = static_cast<long>(m.assignment_n);
  out["marginal_n"] = static_cast<long>(m.marginal_n);
  out["marginal_times"] = m.marginal_times;
  out["burgers_probes"] = static_cast<long>(m.burgers_probes);
  out["burgers_times"] = m.burgers_times;
  return out;
}

// ---------------------------------------------------------------------------
// CSV emission

std::string num_str(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string stamp_line(const ExperimentConfig& cfg) {
  return "# config_hash=" + cfg.config_hash + " seed=" + std::to_string(cfg.seed) +
         " rng=" + std::string(Rng::kAlgorithm) + "\n";
}

std::string trajectories_csv(const ExperimentConfig& cfg,
                             const TrajectoryEnsemble& traj) {
  const Eigen::Index d = traj.states.front().cols();
  const Eigen::Index n = traj.states.front().rows();
  std::string s = stamp_line(cfg);
  s += "particle_id,step_index,t";
  for (Eigen::Index j = 0; j < d; ++j) s += ",x_" + std::to_string(j);
  s += "\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
      s += std::to_string(i);
      s += ',';
      s += std::to_string(k);
      s += ',';
      s += num_str(traj.times[k]);
      const PointCloud& state = traj.states[k];
      for (Eigen::Index j = 0; j < d; ++j) {
        s += ',';
        s += num_str(state(i, j));
      }
      s += '\n';
    }
  }
  return s;
}

std::string couplings_csv(const ExperimentConfig& cfg, const Coupling& c) {
  const Eigen::Index d = c.dim();
  std::string s = stamp_line(cfg);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (j) s += ',';
    s += "z0_" + std::to_string(j);
  }
  for (Eigen::Index j = 0; j < d; ++j) s += ",z1_" + std::to_string(j);
  s += '\n';
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (j) s += ',';
      s += num_str(c.left(i, j));
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      s += ',';
      s += num_str(c.right(i, j));
    }
    s += '\n';
  }
  return s;
}

std::string curve_csv(const ExperimentConfig& cfg,
                      const std::vector<std::pair<int, double>>& curve) {
  std::string s = stamp_line(cfg);
  s += "iteration,loss\n";
  for (const auto& [it, loss] : curve) {
    s += std::to_string(it);
    s += ',';
    s += num_str(loss);
    s += '\n';
  }
  return s;
}

// All content is assembled before the first byte hits disk.
std::vector<std::string> write_artifacts(
    const std::string& out_dir,
    const std::vector<std::pair<std::string, std::string>>& files) {
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const auto& [name, content] : files) {
    const fs::path p = fs::path(out_dir) / name;
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + p.string() + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("short write to " + p.string());
    paths.push_back(p.string());
  }
  return paths;
}

Coupling head_coupling(const Coupling& c, Eigen::Index k) {
  k = std::min(k, c.size());
  return Coupling{c.left.topRows(k), c.right.topRows(k)};
}

MetricsReport coupling_only_report(const Coupling& c, const MetricsConfig& m) {
  MetricsReport r;
  if (m.costs) {
    r.cost_l2sq = transport_cost(c, ConvexCost::sq_norm());
    r.cost_l1 = transport_cost(c, ConvexCost::norm());
    r.cost_p15 = transport_cost(c, ConvexCost::pow_norm(1.5));
  }
  if (m.relative_cost) {
    const Eigen::Index k = std::min(c.size(), m.assignment_n);
    r.relative_l2_cost = relative_l2_cost(head_coupling(c, k), k);
  }
  if (m.monotone && c.dim() == 1) r.monotone_violations = monotone_violations(c);
  return r;
}

ojson round_json(int round, const MetricsReport& r) {
  ojson out;
  out["round"] = round;
  out.update(report_to_json(r));
  return out;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

ExperimentConfig parse_config(const nlohmann::json& raw) {
  if (!raw.is_object()) fail("config must be a JSON object");
  json j = raw;
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) fail("config.preset must be a string");
    json merged = preset_config(j.at("preset").get<std::string>());
    json overlay = j;
    overlay.erase("preset");
    merged.update(overlay);
    j = std::move(merged);
  }
  check_keys(j,
             {"seed", "train_n", "eval_n", "reflow_k", "source", "target",
              "schedule", "backend", "solver", "metrics", "schedules",
              "euler_steps_list", "lambdas"},
             "config");

  ExperimentConfig cfg;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_integer() || j.at("seed").get<long long>() < 0)
      fail("config.seed must be a nonnegative integer");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  cfg.train_n = opt_int(j, "train_n", 2000, "config");
  cfg.eval_n = opt_int(j, "eval_n", 2000, "config");
  cfg.reflow_rounds = static_cast<int>(opt_int(j, "reflow_k", 1, "config"));
  if (cfg.train_n < 2) fail("config.train_n must be >= 2");
  if (cfg.eval_n < 2) fail("config.eval_n must be >= 2");
  if (cfg.reflow_rounds < 1) fail("config.reflow_k must be >= 1");

  if (!j.contains("source") || !j.contains("target"))
    fail("config needs source and target distributions");
  cfg.source = parse_dist(j.at("source"), "config.source");
  cfg.target = parse_dist(j.at("target"), "config.target");
  try {
    validate(cfg.source);
    validate(cfg.target);
  } catch (const std::invalid_argument& e) {
    fail(std::string("config distribution: ") + e.what());
  }
  const Eigen::Index dim = dist_dim(cfg.source);
  if (dim != dist_dim(cfg.target))
    fail("config source and target dimensions differ");

  if (j.contains("schedule")) cfg.schedule = parse_schedule(j.at("schedule"), "config.schedule");
  if (!j.contains("backend")) fail("config.backend is required");
  cfg.backend = parse_backend(j.at("backend"), dim, "config.backend");
  if (j.contains("solver")) cfg.solver = parse_solver(j.at("solver"), "config.solver");
  if (j.contains("metrics")) cfg.metrics = parse_metrics(j.at("metrics"), "config.metrics");

  if (cfg.schedule.kind() != ScheduleKind::Linear &&
      !std::holds_alternative<MlpBackend>(cfg.backend))
    fail("config: exact and knn backends require the linear schedule");
  if (const auto* k = std::get_if<KnnBackend>(&cfg.backend)) {
    if (k->knn_m > cfg.train_n)
      fail("config.backend.m must not exceed train_n");
  }

  if (j.contains("schedules")) {
    if (!j.at("schedules").is_array() || j.at("schedules").empty())
      fail("config.schedules must be a nonempty array of names");
    for (const auto& e : j.at("schedules")) {
      if (!e.is_string()) fail("config.schedules entries must be strings");
      parse_schedule(e, "config.schedules");  // validates the name
      cfg.schedule_names.push_back(e.get<std::string>());
    }
  }
  if (j.contains("euler_steps_list")) {
    if (!j.at("euler_steps_list").is_array() || j.at("euler_steps_list").empty())
      fail("config.euler_steps_list must be a nonempty array");
    for (const auto& e : j.at("euler_steps_list")) {
      if (!e.is_number_integer() || e.get<long>() < 1)
        fail("config.euler_steps_list entries must be positive integers");
      cfg.euler_steps_list.push_back(static_cast<int>(e.get<long>()));
    }
  }
  if (j.contains("lambdas")) {
    if (!j.at("lambdas").is_array() || j.at("lambdas").empty())
      fail("config.lambdas must be a nonempty array");
    for (const auto& e : j.at("lambdas")) {
      const double v = get_num(e, "config.lambdas entry");
      if (v < 0.0) fail("config.lambdas entries must be >= 0");
      cfg.lambdas.push_back(v);
    }
  }

  ojson echo;
  echo["seed"] = cfg.seed;
  echo["train_n"] = static_cast<long>(cfg.train_n);
  echo["eval_n"] = static_cast<long>(cfg.eval_n);
  echo["reflow_k"] = cfg.reflow_rounds;
  echo["source"] = dist_json(cfg.source);
  echo["target"] = dist_json(cfg.target);
  echo["schedule"] = schedule_json(cfg.schedule);
  echo["backend"] = backend_json(cfg.backend);
  echo["solver"] = solver_json(cfg.solver);
  echo["metrics"] = metrics_json_cfg(cfg.metrics);
  if (!cfg.schedule_names.empty()) echo["schedules"] = cfg.schedule_names;
  if (!cfg.euler_steps_list.empty()) echo["euler_steps_list"] = cfg.euler_steps_list;
  if (!cfg.lambdas.empty()) echo["lambdas"] = cfg.lambdas;
  cfg.echo = std::move(echo);
  cfg.config_hash = hex16(fnv1a64(cfg.echo.dump()));
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot read config file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    fail("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  Rng rng = seeded_rng(cfg.seed);
  const PointCloud train_src = sample(cfg.source, cfg.train_n, rng);
  const PointCloud train_tgt = sample(cfg.target, cfg.train_n, rng);
  const PointCloud eval_src = sample(cfg.source, cfg.eval_n, rng);
  const PointCloud eval_tgt = sample(cfg.target, cfg.eval_n, rng);
  const Coupling train_pairs{train_src, train_tgt};
  const Coupling input_pairs{eval_src, eval_tgt};

  RunResult res;
  res.rounds.push_back(coupling_only_report(input_pairs, cfg.metrics));

  RectifyOptions opt;
  opt.backend = cfg.backend;
  opt.schedule = cfg.schedule;
  opt.solver = cfg.solver;
  opt.metrics = cfg.metrics;
  const std::vector<RectifyResult> rounds =
      reflow(train_pairs, cfg.reflow_rounds, opt, rng, &eval_src);
  for (const auto& r : rounds) res.rounds.push_back(r.metrics);

  ojson mj;
  mj["config_hash"] = cfg.config_hash;
  mj["seed"] = cfg.seed;
  mj["rng"] = std::string(Rng::kAlgorithm);
  ojson arr = ojson::array();
  for (std::size_t k = 0; k < res.rounds.size(); ++k)
    arr.push_back(round_json(static_cast<int>(k), res.rounds[k]));
  mj["rounds"] = arr;
  res.metrics_json = mj;

  ojson echo;
  echo["config_hash"] = cfg.config_hash;
  echo["rng"] = std::string(Rng::kAlgorithm);
  echo.update(cfg.echo);

  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("metrics.json", mj.dump(2) + "\n");
  files.emplace_back("config_echo.json", echo.dump(2) + "\n");
  const RectifyResult& last = rounds.back();
  files.emplace_back("trajectories.csv", trajectories_csv(cfg, last.trajectories));
  files.emplace_back("couplings.csv", couplings_csv(cfg, last.coupling));
  if (!last.training_curve.empty())
    files.emplace_back("training_curve.csv", curve_csv(cfg, last.training_curve));
  if (cfg.reflow_rounds > 1) {
    for (std::size_t k = 0; k < rounds.size(); ++k) {
      const std::string tag = "_round" + std::to_string(k + 1) + ".csv";
      files.emplace_back("couplings" + tag, couplings_csv(cfg, rounds[k].coupling));
      if (!rounds[k].training_curve.empty())
        files.emplace_back("training_curve" + tag,
                           curve_csv(cfg, rounds[k].training_curve));
    }
  }
  res.files_written = write_artifacts(out_dir, files);
  return res;
}

std::vector<ScheduleSweepRow> compare_schedules(const ExperimentConfig& cfg,
                                                const std::string& out_dir) {
  const auto* mlp = std::get_if<MlpBackend>(&cfg.backend);
  if (!mlp) fail("compare-schedules requires the mlp backend");
  if (cfg.schedule_names.empty()) fail("compare-schedules needs config.schedules");
  if (cfg.euler_steps_list.empty())
    fail("compare-schedules needs config.euler_steps_list");

  Rng rng = seeded_rng(cfg.seed);
  const PointCloud train_src = sample(cfg.source, cfg.train_n, rng);
  const PointCloud train_tgt = sample(cfg.target, cfg.train_n, rng);
  const PointCloud eval_src = sample(cfg.source, cfg.eval_n, rng);
  const PointCloud eval_tgt = sample(cfg.target, cfg.eval_n, rng);
  // Independent target draw that seeds each schedule's own t = 0 marginal.
  const PointCloud start_tgt = sample(cfg.target, cfg.eval_n, rng);
  const Coupling train_pairs{train_src, train_tgt};

  std::vector<ScheduleSweepRow> rows;
  for (std::size_t si = 0; si < cfg.schedule_names.size(); ++si) {
    const Schedule sched = schedule_from_name(cfg.schedule_names[si]);
    Rng train_rng = rng.split(100 + si);
    TrainResult tr = train_velocity(train_pairs, sched, mlp->train, train_rng,
                                    mlp->feature ? &*mlp->feature : nullptr);
    const MlpField field(std::move(tr.net));

    // The flow starts at the schedule's own time-zero marginal
    // alpha(0) X1 + beta(0) X0 (equal to X0 for the straight line).
    const PointCloud start =
        interpolate_rows(sched, start_tgt, eval_src, 0.0).first;

    for (std::size_t ni = 0; ni < cfg.euler_steps_list.size(); ++ni) {
      const int n_steps = cfg.euler_steps_list[ni];
      SolverSpec spec;
      spec.kind = SolverSpec::Kind::Euler;
      spec.euler_steps = n_steps;
      spec.record_every = 1;
      const TrajectoryEnsemble traj = integrate(field, start, spec);
      const PointCloud ends = traj.final_state();

      const Eigen::Index pn = std::min<Eigen::Index>(cfg.eval_n, 500);
      Rng perm_rng = rng.split(1000 + rows.size());
      ScheduleSweepRow row;
      row.schedule = cfg.schedule_names[si];
      row.n_steps = n_steps;
      row.energy_distance = energy_distance(ends, eval_tgt);
      row.p_value = energy_perm_pvalue(ends.topRows(pn), eval_tgt.topRows(pn),
                                       199, perm_rng);
      row.straightness = straightness(traj);
      const Eigen::Index an = std::min(cfg.metrics.assignment_n, cfg.eval_n);
      row.relative_l2_cost =
          relative_l2_cost(head_coupling(Coupling{start, ends}, an), an);
      rows.push_back(std::move(row));
    }
  }

  std::string csv = stamp_line(cfg);
  csv += "schedule,n_steps,energy_distance,p_value,straightness,relative_l2_cost\n";
  for (const auto& r : rows) {
    csv += r.schedule;
    csv += ',' + std::to_string(r.n_steps);
    csv += ',' + num_str(r.energy_distance);
    csv += ',' + num_str(r.p_value);
    csv += ',' + num_str(r.straightness);
    csv += ',' + num_str(r.relative_l2_cost);
    csv += '\n';
  }
  write_artifacts(out_dir, {{"schedule_compare.csv", csv}});
  return rows;
}

std::vector<L2SweepRow> l2_penalty_sweep(const ExperimentConfig& cfg,
                                         const std::string& out_dir) {
  const auto* mlp = std::get_if<MlpBackend>(&cfg.backend);
  if (!mlp) fail("l2-sweep requires the mlp backend");
  if (cfg.lambdas.empty()) fail("l2-sweep needs config.lambdas");

  Rng rng = seeded_rng(cfg.seed);
  const PointCloud train_src = sample(cfg.source, cfg.train_n, rng);
  const PointCloud train_tgt = sample(cfg.target, cfg.train_n, rng);
  const PointCloud eval_src = sample(cfg.source, cfg.eval_n, rng);
  const PointCloud eval_tgt = sample(cfg.target, cfg.eval_n, rng);
  const Coupling train_pairs{train_src, train_tgt};

  std::vector<L2SweepRow> rows;
  for (std::size_t li = 0; li < cfg.lambdas.size(); ++li) {
    TrainConfig tc = mlp->train;
    tc.l2_penalty = cfg.lambdas[li];
    Rng train_rng = rng.split(200 + li);
    TrainResult tr = train_velocity(train_pairs, cfg.schedule, tc, train_rng,
                                    mlp->feature ? &*mlp->feature : nullptr);
    const MlpField field(std::move(tr.net));

    SolverSpec spec = cfg.solver;
    spec.direction = SolverSpec::Direction::Forward;
    if (spec.record_every < 1) spec.record_every = 1;
    const TrajectoryEnsemble traj = integrate(field, eval_src, spec);

    L2SweepRow row;
    row.lambda = cfg.lambdas[li];
    row.straightness = straightness(traj);
    row.cost_l2sq = transport_cost(Coupling{eval_src, traj.final_state()},
                                   ConvexCost::sq_norm());
    row.energy_distance = energy_distance(traj.final_state(), eval_tgt);
    rows.push_back(row);
  }

  std::string csv = stamp_line(cfg);
  csv += "lambda,straightness,cost_l2sq,energy_distance\n";
  for (const auto& r : rows) {
    csv += num_str(r.lambda);
    csv += ',' + num_str(r.straightness);
    csv += ',' + num_str(r.cost_l2sq);
    csv += ',' + num_str(r.energy_distance);
    csv += '\n';
  }
  write_artifacts(out_dir, {{"l2_sweep.csv", csv}});
  return rows;
}

Coupling read_couplings_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("cannot read " + path);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> data;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (header.empty()) {
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size())
      fail(path + ": row with " + std::to_string(cells.size()) +
           " cells, expected " + std::to_string(header.size()));
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0.0;
      const auto r = std::from_chars(c.data(), c.data() + c.size(), v);
      if (r.ec != std::errc() || r.ptr != c.data() + c.size())
        fail(path + ": cannot parse number '" + c + "'");
      row.push_back(v);
    }
    data.push_back(std::move(row));
  }
  if (header.empty()) fail(path + ": missing header row");
  if (header.size() % 2 != 0) fail(path + ": expected z0_*/z1_* column pairs");
  const Eigen::Index d = static_cast<Eigen::Index>(header.size() / 2);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (header[static_cast<std::size_t>(j)] != "z0_" + std::to_string(j) ||
        header[static_cast<std::size_t>(d + j)] != "z1_" + std::to_string(j))
      fail(path + ": header must be z0_0..z0_{d-1},z1_0..z1_{d-1}");
  }
  if (data.empty()) fail(path + ": no data rows");
  Coupling c;
  c.left.resize(static_cast<Eigen::Index>(data.size()), d);
  c.right.resize(static_cast<Eigen::Index>(data.size()), d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      c.left(static_cast<Eigen::Index>(i), j) = data[i][static_cast<std::size_t>(j)];
      c.right(static_cast<Eigen::Index>(i), j) =
          data[i][static_cast<std::size_t>(d + j)];
    }
  }
  c.validate();
  return c;
}

MetricsReport recompute_metrics(const std::string& couplings_csv,
                                const std::string& out_dir) {
  // Carry the provenance stamp over from the input file when present.
  std::string hash = "unknown";
  std::uint64_t seed = 0;
  {
    std::ifstream is(couplings_csv, std::ios::binary);
    std::string line;
    if (is && std::getline(is, line) && !line.empty() && line.front() == '#') {
      const auto grab = [&line](const std::string& key) -> std::string {
        const std::size_t at = line.find(key);
        if (at == std::string::npos) return {};
        const std::size_t start = at + key.size();
        const std::size_t end = line.find(' ', start);
        return line.substr(start, end - start);
      };
      const std::string h = grab("config_hash=");
      if (!h.empty()) hash = h;
      const std::string s = grab("seed=");
      if (!s.empty()) std::from_chars(s.data(), s.data() + s.size(), seed);
    }
  }

  const Coupling c = read_couplings_csv(couplings_csv);
  MetricsConfig mc;
  mc.assignment_n = 2048;
  const MetricsReport report = coupling_only_report(c, mc);

  ojson mj;
  mj["config_hash"] = hash;
  mj["seed"] = seed;
  mj["rng"] = std::string(Rng::kAlgorithm);
  mj["rounds"] = ojson::array({round_json(0, report)});
  write_artifacts(out_dir, {{"metrics.json", mj.dump(2) + "\n"}});
  return report;
}

}  // namespace rectflow
