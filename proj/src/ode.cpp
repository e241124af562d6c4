#include "rectflow/ode.hpp"

#include <algorithm>
#include <cmath>

namespace rectflow {
namespace {

void validate_spec(const SolverSpec& spec) {
  if (spec.kind == SolverSpec::Kind::Euler && spec.euler_steps < 1)
    throw std::invalid_argument("integrate: euler_steps must be >= 1");
  if (!(spec.rtol > 0.0) || !(spec.atol > 0.0))
    throw std::invalid_argument("integrate: tolerances must be positive");
  if (spec.max_evals < 1)
    throw std::invalid_argument("integrate: max_evals must be positive");
  if (spec.record_every < 0)
    throw std::invalid_argument("integrate: record_every must be >= 0");
}

// Worst per-particle RMS of the error scaled by atol + rtol * |y|.
double error_norm(const PointCloud& err, const PointCloud& y0,
                  const PointCloud& y1, double atol, double rtol) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < err.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < err.cols(); ++j) {
      double sc = atol + rtol * std::max(std::abs(y0(i, j)), std::abs(y1(i, j)));
      double r = err(i, j) / sc;
      acc += r * r;
    }
    worst = std::max(worst, std::sqrt(acc / static_cast<double>(err.cols())));
  }
  return worst;
}

struct Recorder {
  int every;
  bool backward;
  TrajectoryEnsemble out;
  long steps_seen = 0;

  void start(const PointCloud& y) {
    out.times.push_back(0.0);
    out.states.push_back(y);
  }
  // s is integration time in [0, 1]; final steps are always recorded.
  void step(double s, const PointCloud& y, bool final_step) {
    ++steps_seen;
    if (final_step || (every > 0 && steps_seen % every == 0)) {
      out.times.push_back(s);
      out.states.push_back(y);
    }
  }
  TrajectoryEnsemble finish() {
    if (backward) {
      // Report in original time, ascending from the reconstructed t=0 state.
      std::reverse(out.states.begin(), out.states.end());
      std::reverse(out.times.begin(), out.times.end());
      for (double& s : out.times) s = 1.0 - s;
    }
    return std::move(out);
  }
};

}  // namespace

TrajectoryEnsemble integrate(const VelocityField& v, const PointCloud& start,
                             const SolverSpec& spec) {
  validate_spec(spec);
  check_finite(start, "integrate.start");
  if (start.rows() < 1) throw std::invalid_argument("integrate: empty ensemble");

  const bool backward = spec.direction == SolverSpec::Direction::Backward;
  // Integration runs in s over [0, 1]; original time is t = s (forward) or
  // t = 1 - s (backward), with the sign of the field flipped when backward.
  auto field = [&](const PointCloud& y, double t_inner) -> PointCloud {
    PointCloud f = v.eval_rows(y, t_inner);
    if (backward) f = -f;
    return f;
  };

  Recorder rec{spec.record_every, backward, {}, 0};
  PointCloud y = start;
  rec.start(y);
  long evals = 0;

  if (spec.kind == SolverSpec::Kind::Euler) {
    const int n = spec.euler_steps;
    for (int j = 0; j < n; ++j) {
      // Forward samples the left endpoint j/n; backward samples the left
      // endpoint in original time, 1 - (j+1)/n. Neither touches t = 1.
      double s0 = static_cast<double>(j) / n;
      double s1 = static_cast<double>(j + 1) / n;
      double t_inner = backward ? 1.0 - s1 : s0;
      y += (s1 - s0) * field(y, t_inner);
      ++evals;
      if (!y.allFinite())
        throw std::runtime_error("integrate: state diverged (euler)");
      rec.step(s1, y, j + 1 == n);
    }
    rec.out.evals_used = evals;
    return rec.finish();
  }

  // Dormand-Prince 5(4).
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                      a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                      a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // b(5th) - b(4th), for the embedded error estimate.
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  auto t_of = [&](double s) { return backward ? 1.0 - s : s; };

  double s = 0.0;
  double h = 0.05;
  const double hmin = 1e-14;
  while (s < 1.0) {
    bool last = 1.0 - s <= h;
    h = std::min(h, 1.0 - s);
    if (h < hmin) throw std::runtime_error("integrate: rk45 step size underflow");

    PointCloud k1 = field(y, t_of(s));
    PointCloud k2 = field(y + h * (a21 * k1), t_of(s + c2 * h));
    PointCloud k3 = field(y + h * (a31 * k1 + a32 * k2), t_of(s + c3 * h));
    PointCloud k4 = field(y + h * (a41 * k1 + a42 * k2 + a43 * k3), t_of(s + c4 * h));
    PointCloud k5 = field(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4),
                          t_of(s + c5 * h));
    PointCloud k6 = field(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5),
                          t_of(s + h));
    PointCloud y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    PointCloud k7 = field(y5, t_of(s + h));
    evals += 7;
    if (evals > spec.max_evals)
      throw std::runtime_error("integrate: rk45 exceeded max_evals");

    PointCloud err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    if (!y5.allFinite() || !err.allFinite())
      throw std::runtime_error("integrate: state diverged (rk45)");

    double norm = error_norm(err, y, y5, spec.atol, spec.rtol);
    if (norm <= 1.0) {
      s = last ? 1.0 : s + h;
      y = std::move(y5);
      rec.step(s, y, last);
    }
    double factor = norm == 0.0 ? 5.0 : 0.9 * std::pow(norm, -0.2);
    h *= std::clamp(factor, 0.2, 5.0);
  }
  rec.out.evals_used = evals;
  return rec.finish();
}

double roundtrip(const VelocityField& v, const PointCloud& start, SolverSpec spec) {
  spec.record_every = 0;
  spec.direction = SolverSpec::Direction::Forward;
  TrajectoryEnsemble fwd = integrate(v, start, spec);
  spec.direction = SolverSpec::Direction::Backward;
  TrajectoryEnsemble back = integrate(v, fwd.final_state(), spec);
  return (back.initial() - start).rowwise().norm().maxCoeff();
}

}  // namespace rectflow
