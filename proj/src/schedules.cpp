#include "rectflow/schedules.hpp"

#include <cmath>

namespace rectflow {

Schedule Schedule::linear() {
  Schedule s;
  s.kind_ = ScheduleKind::Linear;
  s.name_ = "linear";
  return s;
}

Schedule Schedule::vp(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("vp: a, b must be positive");
  Schedule s;
  s.kind_ = ScheduleKind::Vp;
  s.name_ = "vp";
  s.a_ = a;
  s.b_ = b;
  return s;
}

Schedule Schedule::sub_vp(double a, double b) {
  Schedule s = vp(a, b);
  s.kind_ = ScheduleKind::SubVp;
  s.name_ = "sub-vp";
  return s;
}

Schedule Schedule::ve(double sigma_max, double sigma_min) {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
    throw std::invalid_argument("ve: need sigma_max > sigma_min > 0");
  Schedule s;
  s.kind_ = ScheduleKind::Ve;
  s.name_ = "ve";
  s.a_ = sigma_max;
  s.b_ = sigma_min;
  return s;
}

Schedule Schedule::const_speed_vp() {
  Schedule s;
  s.kind_ = ScheduleKind::ConstSpeedVp;
  s.name_ = "const-speed-vp";
  return s;
}

Schedule Schedule::straight_reparam(std::function<double(double)> alpha,
                                    std::function<double(double)> alpha_dot,
                                    std::string label) {
  if (!alpha || !alpha_dot)
    throw std::invalid_argument("straight_reparam: missing alpha or alpha_dot");
  Schedule s;
  s.kind_ = ScheduleKind::StraightReparam;
  s.name_ = std::move(label);
  s.alpha_fn_ = std::move(alpha);
  s.alpha_dot_fn_ = std::move(alpha_dot);
  return s;
}

Schedule Schedule::straight_power_reparam(double gamma) {
  if (!(gamma >= 1.0))
    throw std::invalid_argument("straight_power_reparam: gamma must be >= 1");
  Schedule s = straight_reparam(
      [gamma](double t) { return std::pow(t, gamma); },
      [gamma](double t) { return gamma * std::pow(t, gamma - 1.0); },
      "straight-power");
  s.a_ = gamma;
  return s;
}

ScheduleEval Schedule::eval(double t) const {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("schedule: t outside [0, 1]");
  ScheduleEval e;
  switch (kind_) {
    case ScheduleKind::Linear:
      e = {t, 1.0 - t, 1.0, -1.0};
      break;
    case ScheduleKind::Vp:
    case ScheduleKind::SubVp: {
      double u = 1.0 - t;
      double expo = -0.25 * a_ * u * u - 0.5 * b_ * u;
      double alpha = std::exp(expo);
      double alpha_dot = alpha * (0.5 * a_ * u + 0.5 * b_);
      if (kind_ == ScheduleKind::Vp) {
        double beta = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
        e = {alpha, beta, alpha_dot, -alpha * alpha_dot / beta};
      } else {
        double beta = 1.0 - alpha * alpha;
        e = {alpha, beta, alpha_dot, -2.0 * alpha * alpha_dot};
      }
      break;
    }
    case ScheduleKind::Ve: {
      double r = a_ / b_;
      double g = std::pow(r, 2.0 * (1.0 - t)) - 1.0;  // >= 0, hits 0 at t = 1
      double g_dot = -2.0 * std::log(r) * (g + 1.0);
      double beta = b_ * std::sqrt(std::max(0.0, g));
      e = {1.0, beta, 0.0, b_ * g_dot / (2.0 * std::sqrt(std::max(0.0, g)))};
      break;
    }
    case ScheduleKind::ConstSpeedVp: {
      double beta = std::sqrt(std::max(0.0, 1.0 - t * t));
      e = {t, beta, 1.0, -t / beta};
      break;
    }
    case ScheduleKind::StraightReparam: {
      double alpha = alpha_fn_(t);
      double alpha_dot = alpha_dot_fn_(t);
      e = {alpha, 1.0 - alpha, alpha_dot, -alpha_dot};
      break;
    }
  }
  return e;
}

std::pair<Point, Point> interpolate(const Schedule& s, const Point& x1,
                                    const Point& x0, double t) {
  if (x1.size() != x0.size() || x1.size() == 0)
    throw std::invalid_argument("interpolate: endpoint size mismatch");
  ScheduleEval e = s.eval(t);
  return {e.alpha * x1 + e.beta * x0, e.alpha_dot * x1 + e.beta_dot * x0};
}

std::pair<PointCloud, PointCloud> interpolate_rows(const Schedule& s,
                                                   const PointCloud& x1,
                                                   const PointCloud& x0,
                                                   double t) {
  if (x1.rows() != x0.rows() || x1.cols() != x0.cols())
    throw std::invalid_argument("interpolate_rows: shape mismatch");
  ScheduleEval e = s.eval(t);
  return {e.alpha * x1 + e.beta * x0, e.alpha_dot * x1 + e.beta_dot * x0};
}

namespace {

double clamped(double t, bool clamp) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("schedule: t outside [0, 1]");
  if (clamp) return std::min(std::max(t, kScheduleClampEps), 1.0 - kScheduleClampEps);
  return t;
}

}  // namespace

EtaSigma derive_eta_sigma(const Schedule& s, bool clamp_times) {
  EtaSigma out;
  out.eta = [s, clamp_times](double t) {
    ScheduleEval e = s.eval(clamped(t, clamp_times));
    if (!(e.alpha > 0.0))
      throw std::domain_error("derive_eta_sigma: alpha vanishes at t=" + std::to_string(t));
    return -e.alpha_dot / e.alpha;
  };
  out.sigma_sq = [s, clamp_times](double t) {
    ScheduleEval e = s.eval(clamped(t, clamp_times));
    if (!(e.alpha > 0.0) || !(e.beta > 0.0))
      throw std::domain_error("derive_eta_sigma: alpha or beta vanishes at t=" +
                              std::to_string(t));
    return 2.0 * e.beta * e.beta * (e.alpha_dot / e.alpha - e.beta_dot / e.beta);
  };
  return out;
}

Point pfode_target(const Schedule& s, const Point& x1, const Point& xi,
                   double t, bool clamp_times) {
  if (x1.size() != xi.size() || x1.size() == 0)
    throw std::invalid_argument("pfode_target: endpoint size mismatch");
  double tc = clamped(t, clamp_times);
  EtaSigma es = derive_eta_sigma(s, /*clamp_times=*/false);
  double eta = es.eta(tc);
  double sig2 = es.sigma_sq(tc);
  ScheduleEval e = s.eval(tc);
  Point x_t = e.alpha * x1 + e.beta * xi;
  return -eta * x_t - (sig2 / (2.0 * e.beta)) * xi;
}

Schedule schedule_from_name(const std::string& name) {
  if (name == "linear") return Schedule::linear();
  if (name == "vp") return Schedule::vp();
  if (name == "sub-vp") return Schedule::sub_vp();
  if (name == "ve") return Schedule::ve(3.0);
  if (name == "const-speed-vp") return Schedule::const_speed_vp();
  throw std::invalid_argument("unknown schedule: " + name);
}

}  // namespace rectflow
