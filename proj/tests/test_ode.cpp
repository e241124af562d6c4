#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rectflow/ode.hpp"

#include <cmath>
#include <vector>

using namespace rectflow;

namespace {

CallableField constant_field(const Point& c) {
  return CallableField([c](const Point&, double) { return c; });
}

CallableField identity_field() {
  return CallableField([](const Point& z, double) { return z; });
}

// dz/dt = z / (1 + t): forward Euler telescopes exactly to z(1) = 2 z(0)
// regardless of the step count, because each factor is (1 + t_k + dt)/(1 + t_k).
CallableField telescoping_field() {
  return CallableField(
      [](const Point& z, double t) -> Point { return z / (1.0 + t); });
}

SolverSpec euler_spec(int steps, int record_every = 0) {
  SolverSpec s;
  s.kind = SolverSpec::Kind::Euler;
  s.euler_steps = steps;
  s.record_every = record_every;
  return s;
}

SolverSpec rk45_spec(double rtol = 1e-8, double atol = 1e-10) {
  SolverSpec s;
  s.kind = SolverSpec::Kind::Rk45;
  s.rtol = rtol;
  s.atol = atol;
  return s;
}

}  // namespace

TEST_CASE("constant fields integrate exactly under both solvers") {
  Point c(2);
  c << 1.5, -0.5;
  auto field = constant_field(c);
  PointCloud start(3, 2);
  start << 0, 0, 1, 1, -2, 3;

  for (int n : {1, 7, 100}) {
    auto traj = integrate(field, start, euler_spec(n));
    CHECK((traj.final_state() - (start.rowwise() + c.transpose())).norm() < 1e-13);
    CHECK(traj.evals_used == n);
    CHECK(traj.times.front() == 0.0);
    CHECK(traj.times.back() == 1.0);
  }
  auto traj = integrate(field, start, rk45_spec());
  CHECK((traj.final_state() - (start.rowwise() + c.transpose())).norm() < 1e-10);
  CHECK(traj.evals_used >= 7);
}

TEST_CASE("euler on dz/dt = z reproduces its discrete compound-growth formula") {
  auto field = identity_field();
  PointCloud start(2, 1);
  start << 1.0, -0.5;
  for (int n : {1, 3, 10, 250}) {
    auto traj = integrate(field, start, euler_spec(n));
    const double factor = std::pow(1.0 + 1.0 / n, n);
    CHECK((traj.final_state() - factor * start).norm() < 1e-12 * factor);
  }
}

TEST_CASE("rk45 on dz/dt = z hits e to its tolerance") {
  auto field = identity_field();
  PointCloud start(1, 1);
  start << 1.0;
  auto traj = integrate(field, start, rk45_spec(1e-8, 1e-12));
  CHECK(traj.final_state()(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-7));
}

TEST_CASE("euler is exact for the telescoping field at any step count") {
  auto field = telescoping_field();
  PointCloud start(2, 2);
  start << 1.0, -2.0, 0.5, 4.0;
  for (int n : {1, 2, 9, 500}) {
    auto traj = integrate(field, start, euler_spec(n));
    CHECK((traj.final_state() - 2.0 * start).norm() < 1e-12);
  }
}

TEST_CASE("euler global error halves when the step count doubles") {
  auto field = identity_field();
  PointCloud start(1, 1);
  start << 1.0;
  const double exact = std::exp(1.0);
  auto err = [&](int n) {
    return std::abs(integrate(field, start, euler_spec(n)).final_state()(0, 0) -
                    exact);
  };
  const double ratio = err(128) / err(64);
  CHECK(ratio > 0.4);
  CHECK(ratio < 0.6);
}

TEST_CASE("recording grid contains both endpoints and every k-th step") {
  auto field = constant_field(Point::Ones(1));
  PointCloud start = PointCloud::Zero(1, 1);
  auto traj = integrate(field, start, euler_spec(10, 3));
  std::vector<double> expected = {0.0, 0.3, 0.6, 0.9, 1.0};
  REQUIRE(traj.times.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i)
    CHECK(traj.times[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  REQUIRE(traj.states.size() == traj.times.size());
  CHECK(traj.initial()(0, 0) == 0.0);
  CHECK(traj.final_state()(0, 0) == doctest::Approx(1.0));

  auto endpoints_only = integrate(field, start, euler_spec(10, 0));
  CHECK(endpoints_only.times.size() == 2);

  for (size_t i = 1; i < traj.times.size(); ++i)
    CHECK(traj.times[i] > traj.times[i - 1]);
}

TEST_CASE("backward runs reconstruct the t=0 state in original time order") {
  Point c(1);
  c << 2.0;
  auto field = constant_field(c);
  PointCloud z1(1, 1);
  z1 << 5.0;

  SolverSpec spec = euler_spec(50, 10);
  spec.direction = SolverSpec::Direction::Backward;
  auto traj = integrate(field, z1, spec);
  CHECK(traj.times.front() == 0.0);
  CHECK(traj.times.back() == 1.0);
  CHECK(traj.initial()(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(traj.final_state()(0, 0) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("roundtrips return to the start") {
  Point c(2);
  c << -1.0, 0.25;
  auto constant = constant_field(c);
  PointCloud start(4, 2);
  start << 0, 0, 1, -1, 2, 2, -3, 1;
  CHECK(roundtrip(constant, start, euler_spec(20)) < 1e-13);

  auto growth = identity_field();
  CHECK(roundtrip(growth, start, rk45_spec(1e-10, 1e-12)) < 1e-7);
}

TEST_CASE("solver agreement on a generic smooth field") {
  CallableField swirl([](const Point& z, double t) -> Point {
    Point v(2);
    v << -z(1) + 0.3 * std::sin(3.0 * t), z(0) - 0.2 * std::cos(2.0 * t);
    return v;
  });
  PointCloud start(3, 2);
  start << 1, 0, 0, 1, 0.5, -0.5;
  auto euler = integrate(swirl, start, euler_spec(10000));
  auto rk = integrate(swirl, start, rk45_spec(1e-8, 1e-10));
  CHECK((euler.final_state() - rk.final_state()).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("budget and divergence failures raise runtime errors") {
  auto field = identity_field();
  PointCloud start(1, 1);
  start << 1.0;
  SolverSpec tight = rk45_spec(1e-12, 1e-14);
  tight.max_evals = 8;
  CHECK_THROWS_AS(integrate(field, start, tight), std::runtime_error);

  CallableField exploding([](const Point& z, double) -> Point { return z * 1e160; });
  CHECK_THROWS_AS(integrate(exploding, start, euler_spec(4)), std::runtime_error);

  CHECK_THROWS_AS(integrate(field, start, euler_spec(0)), std::invalid_argument);
  SolverSpec bad = rk45_spec(-1.0, 1e-8);
  CHECK_THROWS_AS(integrate(field, start, bad), std::invalid_argument);
  CHECK_THROWS_AS(integrate(field, PointCloud(0, 1), euler_spec(4)),
                  std::invalid_argument);
}
