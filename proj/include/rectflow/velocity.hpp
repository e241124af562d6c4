#pragma once

// Velocity field interface shared by the exact, kernel and neural backends
// and by the ODE integrators. Fields are evaluated ensemble-wise: one call
// per time point over an n x d state cloud, which lets backends vectorize.

#include "rectflow/core.hpp"

#include <functional>
#include <utility>

namespace rectflow {

class VelocityField {
 public:
  virtual ~VelocityField() = default;

  // Velocities for every row of `zs` at time t. Must return the same shape.
  virtual PointCloud eval_rows(const PointCloud& zs, double t) const = 0;

  Point operator()(const Point& z, double t) const {
    PointCloud out = eval_rows(z.transpose(), t);
    return out.row(0).transpose();
  }
};

// Wraps a plain function; handy for analytic fields in tests and metrics.
class CallableField final : public VelocityField {
 public:
  using Fn = std::function<Point(const Point&, double)>;

  explicit CallableField(Fn fn) : fn_(std::move(fn)) {
    if (!fn_) throw std::invalid_argument("CallableField: empty function");
  }

  PointCloud eval_rows(const PointCloud& zs, double t) const override {
    PointCloud out(zs.rows(), zs.cols());
    for (Eigen::Index i = 0; i < zs.rows(); ++i)
      out.row(i) = fn_(zs.row(i).transpose(), t).transpose();
    return out;
  }

 private:
  Fn fn_;
};

}  // namespace rectflow
