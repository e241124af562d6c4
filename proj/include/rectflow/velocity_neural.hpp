#pragma once

// Small dense MLP velocity model v(z, t) with hand-rolled reverse-mode
// gradients and Adam. The network takes (z, t) concatenated as input and is
// trained by least squares against the schedule's path derivative over a
// coupling, optionally through a linear feature map and a time weighting.

#include "rectflow/schedules.hpp"
#include "rectflow/velocity.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace rectflow {

enum class Activation { Tanh, Softplus };

struct Mlp {
  // weights[l] is (out x in); layer count >= 1; the final layer is linear.
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::Tanh;

  Eigen::Index input_dim() const { return weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.back().rows(); }

  void validate() const;

  // widths = {input, hidden..., output}.
  static Mlp zeros(const std::vector<Eigen::Index>& widths,
                   Activation act = Activation::Tanh);
  // Gaussian fan-in init, biases zero; deterministic given the rng.
  static Mlp random_init(const std::vector<Eigen::Index>& widths, Rng& rng,
                         Activation act = Activation::Tanh);
};

struct MlpGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static MlpGrads zeros_like(const Mlp& m);
};

// Forward pass; `ts` supplies the time input per row.
PointCloud mlp_forward_rows(const Mlp& m, const PointCloud& zs,
                            const Eigen::VectorXd& ts);
Point mlp_forward(const Mlp& m, const Point& z, double t);

// Linear feature map applied to the residual (rows of H are features).
struct FeatureMap {
  Eigen::MatrixXd h;  // k x d
};

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double l2_penalty = 0.0;                    // lambda ||theta||^2 over all params
  std::function<double(double)> time_weight;  // w_t; empty means constant 1
  // 0: t ~ uniform [0, 1); k > 0: t uniform over {0, 1/k, ..., (k-1)/k}.
  int time_grid = 0;
  double ema_decay = 0.0;  // 0 disables parameter averaging
  std::vector<Eigen::Index> hidden = {64, 64};
  Activation activation = Activation::Tanh;
  int log_every = 100;
  double divergence_loss = 1e8;
};

// Mean over the batch of w_t ||H ((x_dot target) - v(x_t, t))||^2 plus
// l2_penalty * ||theta||^2, together with exact parameter gradients.
// x_t and the target derive from `schedule` (straight line by default, where
// the target is x1 - x0).
std::pair<double, MlpGrads> loss_and_grad(
    const Mlp& m, const Coupling& batch, const std::vector<double>& times,
    const TrainConfig& cfg, const FeatureMap* feature = nullptr,
    const Schedule& schedule = Schedule::linear());

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long step = 0;

  static AdamState zeros_like(const Mlp& m);
};

// One bias-corrected Adam update in place.
void adam_step(Mlp& m, const MlpGrads& g, AdamState& state, const TrainConfig& cfg);

struct TrainResult {
  Mlp net;
  // (iteration, minibatch loss) sampled every cfg.log_every iterations.
  std::vector<std::pair<int, double>> curve;
};

// Minibatch Adam over resampled pairs and fresh times; throws
// std::runtime_error if the loss diverges (non-finite or > divergence_loss).
TrainResult train_velocity(const Coupling& pairs, const Schedule& schedule,
                           const TrainConfig& cfg, Rng& rng,
                           const FeatureMap* feature = nullptr);

// Fits v(., 0) to z1 - z0 over a simulated flow coupling (training times
// pinned to t = 0), yielding the one-step map z -> z + v(z, 0).
TrainResult distill_one_step(const Coupling& flow_pairs, const TrainConfig& cfg,
                             Rng& rng);

// Applies the one-step map of a (typically distilled) net.
PointCloud apply_one_step(const Mlp& net, const PointCloud& z0);

class MlpField final : public VelocityField {
 public:
  explicit MlpField(Mlp net) : net_(std::move(net)) { net_.validate(); }

  PointCloud eval_rows(const PointCloud& zs, double t) const override;

  const Mlp& net() const { return net_; }

 private:
  Mlp net_;
};

}  // namespace rectflow
