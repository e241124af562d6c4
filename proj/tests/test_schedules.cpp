#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rectflow/schedules.hpp"

#include <cmath>
#include <limits>
#include <vector>

using namespace rectflow;

namespace {

Point vec2(double a, double b) {
  Point p(2);
  p << a, b;
  return p;
}

// Central finite differences of alpha/beta as an independent derivative check.
void check_derivatives(const Schedule& s, double t, double tol) {
  const double h = 1e-5;
  auto lo = s.eval(t - h), hi = s.eval(t + h), mid = s.eval(t);
  CHECK(mid.alpha_dot == doctest::Approx((hi.alpha - lo.alpha) / (2 * h)).epsilon(tol));
  CHECK(mid.beta_dot == doctest::Approx((hi.beta - lo.beta) / (2 * h)).epsilon(tol));
}

}  // namespace

TEST_CASE("linear schedule is the straight line") {
  Schedule s = Schedule::linear();
  auto e = s.eval(0.5);
  CHECK(e.alpha == 0.5);
  CHECK(e.beta == 0.5);
  CHECK(e.alpha_dot == 1.0);
  CHECK(e.beta_dot == -1.0);
  CHECK(s.eval(0.0).alpha == 0.0);
  CHECK(s.eval(1.0).beta == 0.0);
}

TEST_CASE("vp endpoints and the documented closed form") {
  Schedule s = Schedule::vp();  // a = 19.9, b = 0.1
  auto at1 = s.eval(1.0);
  CHECK(at1.alpha == doctest::Approx(1.0));
  CHECK(at1.beta == doctest::Approx(0.0));
  // beta_dot -> -inf at t = 1 is reported as IEEE -infinity, not a guess.
  CHECK(std::isinf(at1.beta_dot));
  CHECK(at1.beta_dot < 0.0);

  auto at0 = s.eval(0.0);
  const double alpha0 = std::exp(-19.9 / 4.0 - 0.1 / 2.0);
  CHECK(at0.alpha == doctest::Approx(alpha0).epsilon(1e-12));
  CHECK(at0.beta == doctest::Approx(std::sqrt(1.0 - alpha0 * alpha0)).epsilon(1e-12));

  // Interior closed form: alpha = exp(-a(1-t)^2/4 - b(1-t)/2).
  const double t = 0.3;
  const double u = 1.0 - t;
  CHECK(s.eval(t).alpha ==
        doctest::Approx(std::exp(-19.9 * u * u / 4.0 - 0.1 * u / 2.0)).epsilon(1e-12));
  for (double tt : {0.1, 0.35, 0.6, 0.9}) check_derivatives(s, tt, 1e-6);
}

TEST_CASE("sub-vp and ve shapes") {
  Schedule sub = Schedule::sub_vp();
  for (double t : {0.1, 0.5, 0.9}) {
    auto e = sub.eval(t);
    CHECK(e.beta == doctest::Approx(1.0 - e.alpha * e.alpha).epsilon(1e-12));
    check_derivatives(sub, t, 1e-6);
  }

  const double smax = 4.0, smin = 0.01;
  Schedule ve = Schedule::ve(smax, smin);
  const double r = smax / smin;
  for (double t : {0.1, 0.5, 0.9}) {
    auto e = ve.eval(t);
    CHECK(e.alpha == 1.0);
    CHECK(e.alpha_dot == 0.0);
    CHECK(e.beta ==
          doctest::Approx(smin * std::sqrt(std::pow(r, 2.0 * (1.0 - t)) - 1.0))
              .epsilon(1e-10));
    check_derivatives(ve, t, 1e-5);
  }
  CHECK(ve.eval(1.0).beta == doctest::Approx(0.0));
  CHECK(std::isinf(ve.eval(1.0).beta_dot));
}

TEST_CASE("const-speed-vp stays on the unit circle") {
  Schedule s = Schedule::const_speed_vp();
  for (double t : {0.0, 0.25, 0.5, 0.75}) {
    auto e = s.eval(t);
    CHECK(e.alpha * e.alpha + e.beta * e.beta == doctest::Approx(1.0).epsilon(1e-12));
  }
  check_derivatives(s, 0.5, 1e-6);
  CHECK(std::isinf(s.eval(1.0).beta_dot));
}

TEST_CASE("eval rejects times outside [0,1]") {
  Schedule s = Schedule::vp();
  CHECK_THROWS_AS(s.eval(-0.01), std::domain_error);
  CHECK_THROWS_AS(s.eval(1.01), std::domain_error);
}

TEST_CASE("interpolate returns the path point and its exact derivative") {
  Schedule s = Schedule::linear();
  Point x1 = vec2(2.0, 0.0), x0 = vec2(0.0, -2.0);
  auto [xt, xdot] = interpolate(s, x1, x0, 0.25);
  CHECK((xt - vec2(0.5, -1.5)).norm() < 1e-14);
  CHECK((xdot - vec2(2.0, 2.0)).norm() < 1e-14);

  PointCloud X1(2, 2), X0(2, 2);
  X1.row(0) = x1.transpose();
  X1.row(1) = vec2(1.0, 1.0).transpose();
  X0.row(0) = x0.transpose();
  X0.row(1) = vec2(-1.0, 3.0).transpose();
  auto [rows_t, rows_dot] = interpolate_rows(s, X1, X0, 0.25);
  for (int i = 0; i < 2; ++i) {
    auto [pt, pd] = interpolate(s, X1.row(i).transpose(), X0.row(i).transpose(), 0.25);
    CHECK((rows_t.row(i).transpose() - pt).norm() == 0.0);
    CHECK((rows_dot.row(i).transpose() - pd).norm() == 0.0);
  }
}

TEST_CASE("eta/sigma closed forms for linear and ve") {
  Schedule lin = Schedule::linear();
  EtaSigma es = derive_eta_sigma(lin);
  for (double t : {0.2, 0.5, 0.8}) {
    CHECK(es.eta(t) == doctest::Approx(-1.0 / t).epsilon(1e-12));
    CHECK(es.sigma_sq(t) == doctest::Approx(2.0 * (1.0 - t) / t).epsilon(1e-12));
  }

  const double smax = 4.0, smin = 0.01;
  Schedule ve = Schedule::ve(smax, smin);
  EtaSigma esv = derive_eta_sigma(ve);
  const double r = smax / smin;
  for (double t : {0.3, 0.6, 0.9}) {
    CHECK(esv.eta(t) == doctest::Approx(0.0));
    // sigma^2 = -2 beta beta_dot = 2 smin^2 ln(r) r^(2(1-t)).
    CHECK(esv.sigma_sq(t) ==
          doctest::Approx(2.0 * smin * smin * std::log(r) *
                          std::pow(r, 2.0 * (1.0 - t)))
              .epsilon(1e-8));
  }
}

TEST_CASE("eta/sigma raise at singular times unless clamped") {
  Schedule lin = Schedule::linear();
  EtaSigma es = derive_eta_sigma(lin);
  CHECK_THROWS_AS(es.eta(0.0), std::domain_error);   // alpha(0) = 0
  CHECK_THROWS_AS(es.sigma_sq(1.0), std::domain_error);

  EtaSigma clamped = derive_eta_sigma(lin, /*clamp_times=*/true);
  CHECK(clamped.eta(0.0) == doctest::Approx(-1.0 / kScheduleClampEps));
  CHECK(std::isfinite(clamped.sigma_sq(1.0)));
}

TEST_CASE("drift target assembled from eta/sigma reproduces the path derivative") {
  Rng rng(2024);
  std::vector<Schedule> schedules = {Schedule::linear(), Schedule::vp(),
                                     Schedule::sub_vp(), Schedule::ve(4.0)};
  for (const auto& s : schedules) {
    for (int trial = 0; trial < 50; ++trial) {
      Point x1(3), xi(3);
      for (int j = 0; j < 3; ++j) {
        x1(j) = rng.normal();
        xi(j) = rng.normal();
      }
      double t = 0.01 + 0.98 * rng.uniform();
      auto e = s.eval(t);
      Point direct = e.alpha_dot * x1 + e.beta_dot * xi;
      Point via_eta = pfode_target(s, x1, xi, t);
      CHECK((via_eta - direct).norm() <= 1e-6 * (1.0 + direct.norm()));
    }
  }
}

TEST_CASE("straight reparameterizations stay on the chord") {
  Schedule s = Schedule::straight_power_reparam(2.0);
  Point x1 = vec2(3.0, 1.0), x0 = vec2(-1.0, 2.0);
  for (double t : {0.2, 0.5, 0.8}) {
    auto e = s.eval(t);
    CHECK(e.alpha == doctest::Approx(t * t).epsilon(1e-12));
    CHECK(e.alpha + e.beta == doctest::Approx(1.0).epsilon(1e-12));

    // The path point is on the segment and the velocity is collinear with it.
    auto [xt, xdot] = interpolate(s, x1, x0, t);
    Point chord = x1 - x0;
    Point rel = xt - x0;
    CHECK(std::abs(rel(0) * chord(1) - rel(1) * chord(0)) < 1e-12);
    CHECK(std::abs(xdot(0) * chord(1) - xdot(1) * chord(0)) < 1e-12);
  }
  CHECK(s.eval(0.0).alpha == 0.0);
  CHECK(s.eval(1.0).alpha == 1.0);
  CHECK_THROWS_AS(Schedule::straight_power_reparam(0.5), std::invalid_argument);
}

TEST_CASE("named lookup resolves families and rejects unknown names") {
  CHECK(schedule_from_name("linear").kind() == ScheduleKind::Linear);
  CHECK(schedule_from_name("vp").kind() == ScheduleKind::Vp);
  CHECK(schedule_from_name("sub-vp").kind() == ScheduleKind::SubVp);
  CHECK(schedule_from_name("const-speed-vp").kind() == ScheduleKind::ConstSpeedVp);

  Schedule ve = schedule_from_name("ve");
  CHECK(ve.kind() == ScheduleKind::Ve);
  CHECK(ve.param_a() == 3.0);
  CHECK(ve.param_b() == 0.01);

  CHECK_THROWS_AS(schedule_from_name("bogus"), std::invalid_argument);
}
