#pragma once

// Dense sample-cloud types and the deterministic RNG used everywhere.
// A PointCloud is an n x d matrix, one sample per row; all numerics are
// double precision. Every stochastic routine in the library takes an Rng
// explicitly so that a run is a pure function of its seed.

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace rectflow {

using Point = Eigen::VectorXd;
using PointCloud = Eigen::MatrixXd;

// Counter-style PCG32 generator plus Box-Muller normals. The integer stream
// is platform independent; float streams are bit-stable for a given build.
// The algorithm identifier is recorded in emitted run metadata.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "pcg32-xsh-rr+box-muller";

  explicit Rng(std::uint64_t seed);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller; pairs are generated and the spare cached.
  double normal();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Deterministically derived generator for a parallel or per-item substream.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

// n x d cloud of iid standard normals, filled row by row.
PointCloud standard_normal_batch(Rng& rng, Eigen::Index n, Eigen::Index d);

// Throws std::invalid_argument naming `what` if any entry is NaN/inf.
void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const std::string& what);

// A coupling is two clouds of equal shape; row i of `left` travels to row i
// of `right`.
struct Coupling {
  PointCloud left;
  PointCloud right;

  Coupling() = default;
  Coupling(PointCloud l, PointCloud r) : left(std::move(l)), right(std::move(r)) {
    validate();
  }

  Eigen::Index size() const { return left.rows(); }
  Eigen::Index dim() const { return left.cols(); }

  void validate() const {
    if (left.rows() != right.rows() || left.cols() != right.cols())
      throw std::invalid_argument("coupling: left/right shape mismatch");
    check_finite(left, "coupling.left");
    check_finite(right, "coupling.right");
  }
};

}  // namespace rectflow
