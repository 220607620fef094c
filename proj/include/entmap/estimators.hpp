#ifndef ENTMAP_ESTIMATORS_HPP_
#define ENTMAP_ESTIMATORS_HPP_

#include "entmap/core.hpp"
#include "entmap/sinkhorn.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace entmap {

/// Parameters of the batched estimator: k batches of m points each.
struct EstimatorConfig {
  double epsilon = 1.0;
  std::size_t k = 1;
  /// Batch size; 0 means n / k for the sample at hand.
  std::size_t m = 0;
  /// Recorded with results; the estimator itself draws no randomness.
  std::uint64_t seed = 0;
  SolverOptions solver;

  /// Batch size for a sample of n points. Throws InputError unless k * m == n.
  std::size_t batch_size(std::size_t n) const;
};

/// Out-of-sample evaluation from potentials solved on (X, Y): the softmax
/// average of Y with weights proportional to b_j exp((g_j - c(x, Y_j)) / eps).
Vector extended_map(const Vector& x, const DualPotentials& pot, const PointCloud& Y, double epsilon);

/// Row-wise version of `extended_map` for a set of query points.
Matrix extended_map(const Matrix& queries, const DualPotentials& pot, const PointCloud& Y, double epsilon);

/// In-sample estimator at x: replace X_1 by x, solve on (X^(1), Y) and
/// return the plan-weighted average of Y for the replaced point.
/// Requires |X| == |Y|.
Vector in_sample_map(const Vector& x, const PointCloud& X, const PointCloud& Y, double epsilon,
                     const SolverOptions& options = {});

/// In-sample estimator for many query points on one sample.
///
/// The sample problem is solved once. Each query perturbs a single row of
/// that problem, so all queries are then re-balanced together from the base
/// solution with matrix-matrix products. Queries whose scalings leave a safe
/// range fall back to a warm-started log-domain solve. Results agree with
/// `in_sample_map` up to the solver tolerance.
class InSampleMap {
 public:
  InSampleMap(PointCloud X, PointCloud Y, double epsilon, const SolverOptions& options = {});

  /// One output row per query row.
  Matrix evaluate(const Matrix& queries) const;
  Vector evaluate(const Vector& x) const;

  const DualPotentials& base() const { return base_; }
  const PointCloud& source() const { return X_; }
  const PointCloud& target() const { return Y_; }
  double epsilon() const { return epsilon_; }

 private:
  Matrix evaluate_block(const Matrix& queries) const;
  Vector fallback(const Vector& x, const Vector& f0) const;

  PointCloud X_;
  PointCloud Y_;
  double epsilon_;
  SolverOptions options_;
  DualPotentials base_;
  Matrix kernel_;  // base plan density, cached when small enough; row 0 zeroed
  bool cached_ = false;
};

/// Batched estimator: average of in-sample estimators over k contiguous
/// batches of size m. Batches are taken in storage order; shuffle first if
/// the sample order carries structure.
class BatchedMap {
 public:
  BatchedMap(const PointCloud& X, const PointCloud& Y, const EstimatorConfig& cfg);

  Matrix evaluate(const Matrix& queries) const;
  Vector evaluate(const Vector& x) const;

  std::size_t batches() const { return batches_.size(); }
  const InSampleMap& batch(std::size_t i) const { return batches_.at(i); }

 private:
  std::vector<InSampleMap> batches_;
};

/// Direct form of the batched estimator: one `in_sample_map` per batch.
Vector batched_map(const Vector& x, const PointCloud& X, const PointCloud& Y, const EstimatorConfig& cfg);

/// Closed-form entropic map between N(x0, S0) and N(x1, S1) for the cost
/// 0.5||x - y||^2. The map is affine: T(x) = x1 + C^T S0^{-1} (x - x0).
class GaussianEntropicMap {
 public:
  GaussianEntropicMap(Vector x0, const SpdMatrix& S0, Vector x1, const SpdMatrix& S1, double epsilon);

  Vector operator()(const Vector& x) const;
  /// Applies the map to each row.
  Matrix apply(const Matrix& points) const;

  /// The matrix C^T S0^{-1}.
  const Eigen::MatrixXd& linear() const { return A_; }
  const Vector& offset() const { return b_; }

 private:
  Eigen::MatrixXd A_;
  Vector b_;
};

Vector gaussian_entropic_map(const Vector& x0, const SpdMatrix& S0, const Vector& x1, const SpdMatrix& S1,
                             double epsilon, const Vector& x);

}  // namespace entmap

#endif  // ENTMAP_ESTIMATORS_HPP_
