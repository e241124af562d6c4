#pragma once

// Generalized interpolation schedules x_t = alpha(t) x1 + beta(t) x0 with
// exact closed-form derivatives, and the (eta, sigma^2) reparameterization of
// the induced probability-flow target.
//
// Singularities are reported honestly: vp, ve and const-speed-vp have
// beta_dot -> -inf as t -> 1, and eval() returns the IEEE infinity there
// rather than guessing. Operations that require alpha, beta > 0 (the
// eta/sigma derivation and pfode_target) raise std::domain_error at a
// singular time unless the caller explicitly opts into clamping t to
// [1e-5, 1 - 1e-5].

#include "rectflow/core.hpp"

#include <functional>
#include <string>
#include <utility>

namespace rectflow {

struct ScheduleEval {
  double alpha = 0.0;
  double beta = 0.0;
  double alpha_dot = 0.0;
  double beta_dot = 0.0;
};

enum class ScheduleKind { Linear, Vp, SubVp, Ve, ConstSpeedVp, StraightReparam };

class Schedule {
 public:
  // alpha = t, beta = 1 - t.
  static Schedule linear();
  // alpha = exp(-a(1-t)^2/4 - b(1-t)/2), beta = sqrt(1 - alpha^2).
  static Schedule vp(double a = 19.9, double b = 0.1);
  // Same alpha as vp, beta = 1 - alpha^2.
  static Schedule sub_vp(double a = 19.9, double b = 0.1);
  // alpha = 1, beta = sigma_min * sqrt(r^(2(1-t)) - 1) with r = sigma_max/sigma_min.
  static Schedule ve(double sigma_max, double sigma_min = 0.01);
  // alpha = t, beta = sqrt(1 - t^2): vp-family shape at constant path speed.
  static Schedule const_speed_vp();
  // User-supplied monotone alpha with alpha(0)=0, alpha(1)=1; beta = 1 - alpha,
  // so paths coincide with straight lines traversed at a different clock.
  static Schedule straight_reparam(std::function<double(double)> alpha,
                                   std::function<double(double)> alpha_dot,
                                   std::string label = "straight-reparam");
  // Convenience: alpha = t^gamma (gamma >= 1).
  static Schedule straight_power_reparam(double gamma);

  // Throws std::domain_error outside [0, 1].
  ScheduleEval eval(double t) const;

  ScheduleKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double param_a() const { return a_; }
  double param_b() const { return b_; }

 private:
  Schedule() = default;

  ScheduleKind kind_ = ScheduleKind::Linear;
  std::string name_ = "linear";
  double a_ = 0.0;  // vp/sub-vp: a; ve: sigma_max; power reparam: gamma
  double b_ = 0.0;  // vp/sub-vp: b; ve: sigma_min
  std::function<double(double)> alpha_fn_;
  std::function<double(double)> alpha_dot_fn_;
};

// x_t and its exact time derivative for one pair.
std::pair<Point, Point> interpolate(const Schedule& s, const Point& x1,
                                    const Point& x0, double t);

// Row-wise version over coupled clouds.
std::pair<PointCloud, PointCloud> interpolate_rows(const Schedule& s,
                                                   const PointCloud& x1,
                                                   const PointCloud& x0,
                                                   double t);

// eta(t) = -alpha_dot/alpha, sigma_sq(t) = 2 beta^2 (alpha_dot/alpha - beta_dot/beta).
// The closures validate per call: t must lie in (0, 1) and alpha, beta must be
// positive there, else std::domain_error ("undefined schedule"). With
// clamp_times, t is first clamped to [1e-5, 1 - 1e-5].
struct EtaSigma {
  std::function<double(double)> eta;
  std::function<double(double)> sigma_sq;
};

EtaSigma derive_eta_sigma(const Schedule& s, bool clamp_times = false);

// Drift target -eta(t) x_t - sigma_sq(t)/(2 beta(t)) * xi evaluated at
// x_t = alpha x1 + beta xi. Computed through the eta/sigma route on purpose;
// by construction it must reproduce alpha_dot x1 + beta_dot xi.
Point pfode_target(const Schedule& s, const Point& x1, const Point& xi,
                   double t, bool clamp_times = false);

// Parses "linear", "vp", "sub-vp", "ve", "const-speed-vp" with family-default
// parameters (ve resolves to sigma_max = 3, a toy-problem scale; pass explicit
// parameters through Schedule::ve for anything else). Throws on unknown names.
Schedule schedule_from_name(const std::string& name);

constexpr double kScheduleClampEps = 1e-5;

}  // namespace rectflow
