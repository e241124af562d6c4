#pragma once

// Sampleable source/target distributions for toy transport problems:
// diagonal Gaussians, finite Gaussian mixtures, empirical clouds (resampled
// with replacement) and axis-aligned uniform boxes.

#include "rectflow/core.hpp"

#include <variant>
#include <vector>

namespace rectflow {

struct DiagonalGaussian {
  Point mean;
  Point stddev;  // per-coordinate, all > 0
};

struct GaussianMixture {
  std::vector<double> weights;  // positive, sum to 1 within 1e-12
  std::vector<DiagonalGaussian> components;
};

struct Empirical {
  PointCloud points;  // at least one row
};

struct UniformBox {
  Point lo;
  Point hi;  // hi > lo per coordinate
};

using DistributionSpec =
    std::variant<DiagonalGaussian, GaussianMixture, Empirical, UniformBox>;

Eigen::Index dist_dim(const DistributionSpec& spec);

// Throws std::invalid_argument on malformed parameters.
void validate(const DistributionSpec& spec);

// n iid draws, one per row. Consumes the rng stream deterministically.
PointCloud sample(const DistributionSpec& spec, Eigen::Index n, Rng& rng);

struct Moments {
  Point mean;
  Eigen::MatrixXd cov;
};

// Exact mean/covariance of the spec; for Empirical these are the moments of
// the empirical measure itself (population normalization).
Moments mean_and_cov(const DistributionSpec& spec);

// Convolves a sample cloud with N(0, sigma^2 I). Used to give a density to
// degenerate (atomic) sources before applying density-based velocity fields.
PointCloud smooth_source(const PointCloud& cloud, double sigma, Rng& rng);

}  // namespace rectflow
