#include "rectflow/velocity_neural.hpp"

#include <cmath>

namespace rectflow {
namespace {

// Stable softplus and its derivative (logistic sigmoid).
double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::Tanh) return z.array().tanh();
  return z.unaryExpr([](double x) { return softplus(x); });
}

Eigen::MatrixXd activate_prime(const Eigen::MatrixXd& z, Activation act) {
  if (act == Activation::Tanh)
    return (1.0 - z.array().tanh().square()).matrix();
  return z.unaryExpr([](double x) { return sigmoid(x); });
}

}  // namespace

void Mlp::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    throw std::invalid_argument("mlp: inconsistent layer lists");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != biases[l].size())
      throw std::invalid_argument("mlp: weight/bias shape mismatch");
    if (l > 0 && weights[l].cols() != weights[l - 1].rows())
      throw std::invalid_argument("mlp: layer width mismatch");
    check_finite(weights[l], "mlp.weights");
    check_finite(biases[l], "mlp.biases");
  }
}

Mlp Mlp::zeros(const std::vector<Eigen::Index>& widths, Activation act) {
  if (widths.size() < 2)
    throw std::invalid_argument("mlp: need at least input and output widths");
  Mlp m;
  m.activation = act;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    if (widths[l] < 1 || widths[l + 1] < 1)
      throw std::invalid_argument("mlp: widths must be positive");
    m.weights.emplace_back(Eigen::MatrixXd::Zero(widths[l + 1], widths[l]));
    m.biases.emplace_back(Eigen::VectorXd::Zero(widths[l + 1]));
  }
  return m;
}

Mlp Mlp::random_init(const std::vector<Eigen::Index>& widths, Rng& rng,
                     Activation act) {
  Mlp m = zeros(widths, act);
  for (auto& w : m.weights) {
    double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * rng.normal();
  }
  return m;
}

MlpGrads MlpGrads::zeros_like(const Mlp& m) {
  MlpGrads g;
  for (const auto& w : m.weights) g.weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : m.biases) g.biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
  return g;
}

PointCloud mlp_forward_rows(const Mlp& m, const PointCloud& zs,
                            const Eigen::VectorXd& ts) {
  m.validate();
  if (zs.rows() != ts.size())
    throw std::invalid_argument("mlp_forward: z/t count mismatch");
  if (zs.cols() + 1 != m.input_dim())
    throw std::invalid_argument("mlp_forward: input width mismatch");

  Eigen::MatrixXd h(zs.rows(), zs.cols() + 1);
  h.leftCols(zs.cols()) = zs;
  h.col(zs.cols()) = ts;
  const std::size_t last = m.weights.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    Eigen::MatrixXd pre = h * m.weights[l].transpose();
    pre.rowwise() += m.biases[l].transpose();
    h = (l == last) ? pre : activate(pre, m.activation);
  }
  return h;
}

Point mlp_forward(const Mlp& m, const Point& z, double t) {
  Eigen::VectorXd ts(1);
  ts[0] = t;
  return mlp_forward_rows(m, z.transpose(), ts).row(0).transpose();
}

std::pair<double, MlpGrads> loss_and_grad(const Mlp& m, const Coupling& batch,
                                          const std::vector<double>& times,
                                          const TrainConfig& cfg,
                                          const FeatureMap* feature,
                                          const Schedule& schedule) {
  m.validate();
  batch.validate();
  const Eigen::Index n = batch.size();
  const Eigen::Index d = batch.dim();
  if (static_cast<Eigen::Index>(times.size()) != n)
    throw std::invalid_argument("loss_and_grad: times/batch size mismatch");
  if (d != m.output_dim() || d + 1 != m.input_dim())
    throw std::invalid_argument("loss_and_grad: net/batch width mismatch");
  if (feature && feature->h.cols() != d)
    throw std::invalid_argument("loss_and_grad: feature map width mismatch");

  // Per-row interpolants and residual targets from the schedule.
  PointCloud xt(n, d), target(n, d);
  Eigen::VectorXd ts(n), wt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ScheduleEval e = schedule.eval(times[static_cast<std::size_t>(i)]);
    xt.row(i) = e.alpha * batch.right.row(i) + e.beta * batch.left.row(i);
    target.row(i) = e.alpha_dot * batch.right.row(i) + e.beta_dot * batch.left.row(i);
    ts[i] = times[static_cast<std::size_t>(i)];
    wt[i] = cfg.time_weight ? cfg.time_weight(ts[i]) : 1.0;
    if (!(wt[i] > 0.0))
      throw std::invalid_argument("loss_and_grad: time weights must be positive");
  }

  // Forward pass, keeping pre-activations and activations for backprop.
  const std::size_t layers = m.weights.size();
  std::vector<Eigen::MatrixXd> acts(layers + 1), pres(layers);
  acts[0].resize(n, d + 1);
  acts[0].leftCols(d) = xt;
  acts[0].col(d) = ts;
  for (std::size_t l = 0; l < layers; ++l) {
    pres[l] = acts[l] * m.weights[l].transpose();
    pres[l].rowwise() += m.biases[l].transpose();
    acts[l + 1] = (l + 1 == layers) ? pres[l] : activate(pres[l], m.activation);
  }

  Eigen::MatrixXd residual = target - acts[layers];  // n x d
  double data_loss;
  Eigen::MatrixXd dloss_dout(n, d);
  if (feature) {
    Eigen::MatrixXd hr = residual * feature->h.transpose();  // n x k
    data_loss = (hr.array().square().rowwise().sum() * wt.array()).mean();
    dloss_dout = (-2.0 / static_cast<double>(n)) *
                 (wt.asDiagonal() * (hr * feature->h));
  } else {
    data_loss = (residual.array().square().rowwise().sum() * wt.array()).mean();
    dloss_dout = (-2.0 / static_cast<double>(n)) * (wt.asDiagonal() * residual);
  }

  // Reverse pass.
  MlpGrads g = MlpGrads::zeros_like(m);
  Eigen::MatrixXd delta = dloss_dout;
  for (std::size_t l = layers; l-- > 0;) {
    g.weights[l] = delta.transpose() * acts[l];
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0)
      delta = (delta * m.weights[l]).cwiseProduct(activate_prime(pres[l - 1], m.activation));
  }

  double loss = data_loss;
  if (cfg.l2_penalty != 0.0) {
    double norm2 = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      norm2 += m.weights[l].squaredNorm() + m.biases[l].squaredNorm();
      g.weights[l] += 2.0 * cfg.l2_penalty * m.weights[l];
      g.biases[l] += 2.0 * cfg.l2_penalty * m.biases[l];
    }
    loss += cfg.l2_penalty * norm2;
  }
  return {loss, std::move(g)};
}

AdamState AdamState::zeros_like(const Mlp& m) {
  AdamState s;
  for (const auto& w : m.weights) {
    s.mw.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    s.vw.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : m.biases) {
    s.mb.emplace_back(Eigen::VectorXd::Zero(b.size()));
    s.vb.emplace_back(Eigen::VectorXd::Zero(b.size()));
  }
  return s;
}

void adam_step(Mlp& m, const MlpGrads& g, AdamState& state, const TrainConfig& cfg) {
  if (g.weights.size() != m.weights.size())
    throw std::invalid_argument("adam_step: grad/param mismatch");
  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    state.mw[l] = b1 * state.mw[l] + (1.0 - b1) * g.weights[l];
    state.vw[l] = b2 * state.vw[l] + (1.0 - b2) * g.weights[l].cwiseProduct(g.weights[l]);
    m.weights[l].array() -= cfg.learning_rate * (state.mw[l].array() / c1) /
                            ((state.vw[l].array() / c2).sqrt() + cfg.adam_eps);
    state.mb[l] = b1 * state.mb[l] + (1.0 - b1) * g.biases[l];
    state.vb[l] = b2 * state.vb[l] + (1.0 - b2) * g.biases[l].cwiseProduct(g.biases[l]);
    m.biases[l].array() -= cfg.learning_rate * (state.mb[l].array() / c1) /
                           ((state.vb[l].array() / c2).sqrt() + cfg.adam_eps);
  }
}

namespace {

void check_train_config(const TrainConfig& cfg) {
  if (cfg.iterations < 0) throw std::invalid_argument("train: iterations < 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate <= 0");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) ||
      !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0))
    throw std::invalid_argument("train: adam betas must lie in [0, 1)");
  if (!(cfg.l2_penalty >= 0.0)) throw std::invalid_argument("train: l2_penalty < 0");
  if (cfg.time_grid < 0) throw std::invalid_argument("train: time_grid < 0");
  if (!(cfg.ema_decay >= 0.0 && cfg.ema_decay < 1.0))
    throw std::invalid_argument("train: ema_decay must lie in [0, 1)");
  if (cfg.log_every < 1) throw std::invalid_argument("train: log_every < 1");
}

}  // namespace

TrainResult train_velocity(const Coupling& pairs, const Schedule& schedule,
                           const TrainConfig& cfg, Rng& rng,
                           const FeatureMap* feature) {
  pairs.validate();
  check_train_config(cfg);
  const Eigen::Index n = pairs.size();
  const Eigen::Index d = pairs.dim();

  std::vector<Eigen::Index> widths;
  widths.push_back(d + 1);
  for (Eigen::Index h : cfg.hidden) widths.push_back(h);
  widths.push_back(d);

  TrainResult result;
  result.net = Mlp::random_init(widths, rng, cfg.activation);
  AdamState adam = AdamState::zeros_like(result.net);
  Mlp ema = result.net;

  Coupling batch;
  batch.left.resize(cfg.batch_size, d);
  batch.right.resize(cfg.batch_size, d);
  std::vector<double> times(static_cast<std::size_t>(cfg.batch_size));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    // Resample the minibatch with replacement, then fresh times per example.
    for (int i = 0; i < cfg.batch_size; ++i) {
      auto r = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      batch.left.row(i) = pairs.left.row(r);
      batch.right.row(i) = pairs.right.row(r);
    }
    for (int i = 0; i < cfg.batch_size; ++i) {
      times[static_cast<std::size_t>(i)] =
          cfg.time_grid > 0
              ? static_cast<double>(rng.below(static_cast<std::uint64_t>(cfg.time_grid))) /
                    cfg.time_grid
              : rng.uniform();
    }

    auto [loss, grads] = loss_and_grad(result.net, batch, times, cfg, feature, schedule);
    if (!std::isfinite(loss) || loss > cfg.divergence_loss)
      throw std::runtime_error("train_velocity: loss diverged at iteration " +
                               std::to_string(iter));
    adam_step(result.net, grads, adam, cfg);

    if (cfg.ema_decay > 0.0) {
      for (std::size_t l = 0; l < ema.weights.size(); ++l) {
        ema.weights[l] = cfg.ema_decay * ema.weights[l] + (1.0 - cfg.ema_decay) * result.net.weights[l];
        ema.biases[l] = cfg.ema_decay * ema.biases[l] + (1.0 - cfg.ema_decay) * result.net.biases[l];
      }
    }
    if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations)
      result.curve.emplace_back(iter, loss);
  }

  if (cfg.ema_decay > 0.0) result.net = ema;
  return result;
}

TrainResult distill_one_step(const Coupling& flow_pairs, const TrainConfig& cfg,
                             Rng& rng) {
  TrainConfig pinned = cfg;
  pinned.time_grid = 1;  // all training times are exactly 0
  return train_velocity(flow_pairs, Schedule::linear(), pinned, rng);
}

PointCloud apply_one_step(const Mlp& net, const PointCloud& z0) {
  return z0 + mlp_forward_rows(net, z0, Eigen::VectorXd::Zero(z0.rows()));
}

PointCloud MlpField::eval_rows(const PointCloud& zs, double t) const {
  return mlp_forward_rows(net_, zs, Eigen::VectorXd::Constant(zs.rows(), t));
}

}  // namespace rectflow
