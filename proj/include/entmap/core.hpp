#ifndef ENTMAP_CORE_HPP_
#define ENTMAP_CORE_HPP_

#include <Eigen/Dense>

#include <iosfwd>
#include <string>

namespace entmap {

/// Row-major dense matrix; point sets are stored one point per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A finite weighted point set in R^d.
///
/// Weights are nonnegative and sum to one (within 1e-12). Coordinates must be
/// finite. Duplicate points are allowed and are treated as distinct atoms.
class PointCloud {
 public:
  /// Uniform weights 1/n.
  explicit PointCloud(Matrix points);
  PointCloud(Matrix points, Vector weights);

  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }

  const Matrix& points() const { return points_; }
  const Vector& weights() const { return weights_; }
  auto point(Eigen::Index i) const { return points_.row(i); }

  bool uniform() const { return uniform_; }

  /// Weighted mean of the points.
  Vector mean() const;

 private:
  Matrix points_;
  Vector weights_;
  bool uniform_ = true;
};

/// Symmetric positive definite matrix.
class SpdMatrix {
 public:
  explicit SpdMatrix(Eigen::MatrixXd entries);

  static SpdMatrix identity(Eigen::Index d);
  static SpdMatrix diagonal(const Vector& diag);

  Eigen::Index dim() const { return entries_.rows(); }
  const Eigen::MatrixXd& matrix() const { return entries_; }

  /// Eigenvalues in ascending order.
  Vector eigenvalues() const;

 private:
  Eigen::MatrixXd entries_;
};

/// Entry (i, j) is 0.5 * ||X_i - Y_j||^2.
Matrix half_sq_cost_matrix(const PointCloud& X, const PointCloud& Y);

/// Principal square root via symmetric eigendecomposition.
SpdMatrix spd_sqrt(const SpdMatrix& A);

/// Inverse of the principal square root.
SpdMatrix spd_inv_sqrt(const SpdMatrix& A);

/// Point clouds as CSV: one row per point, d coordinate columns, and an
/// optional trailing weight column when `with_weights` is set.
void write_point_cloud_csv(std::ostream& out, const PointCloud& cloud, bool with_weights = false);
void write_point_cloud_csv(const std::string& path, const PointCloud& cloud, bool with_weights = false);

/// Reads the CSV format above. A header line is skipped if it does not parse
/// as numbers. With `has_weights` the last column is taken as weights.
PointCloud read_point_cloud_csv(std::istream& in, bool has_weights = false);
PointCloud read_point_cloud_csv(const std::string& path, bool has_weights = false);

}  // namespace entmap

#endif  // ENTMAP_CORE_HPP_
