#include "entmap/core.hpp"

#include "entmap/error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace entmap {

namespace {

constexpr double kWeightSumTol = 1e-12;
constexpr double kSymmetryTol = 1e-10;
constexpr double kEigenFloor = 1e-12;

void check_points(const Matrix& points) {
  if (points.rows() < 1 || points.cols() < 1) {
    throw InputError("point cloud needs n >= 1 points in d >= 1 dimensions");
  }
  if (!points.allFinite()) {
    throw InputError("point cloud has non-finite coordinates");
  }
}

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen_of(const SpdMatrix& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.matrix());
  if (es.info() != Eigen::Success) {
    throw InputError("eigendecomposition failed");
  }
  return es;
}

}  // namespace

PointCloud::PointCloud(Matrix points) : points_(std::move(points)) {
  check_points(points_);
  weights_ = Vector::Constant(points_.rows(), 1.0 / static_cast<double>(points_.rows()));
}

PointCloud::PointCloud(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)), uniform_(false) {
  check_points(points_);
  if (weights_.size() != points_.rows()) {
    throw InputError("weight count does not match point count");
  }
  if (!weights_.allFinite() || (weights_.array() < 0.0).any()) {
    throw InputError("weights must be finite and nonnegative");
  }
  if (std::abs(weights_.sum() - 1.0) > kWeightSumTol) {
    throw InputError("weights must sum to 1");
  }
}

Vector PointCloud::mean() const { return points_.transpose() * weights_; }

SpdMatrix::SpdMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
  if (entries_.rows() < 1 || entries_.rows() != entries_.cols()) {
    throw InputError("SPD matrix must be square and non-empty");
  }
  if (!entries_.allFinite()) {
    throw InputError("SPD matrix has non-finite entries");
  }
  const double scale = std::max(entries_.cwiseAbs().maxCoeff(), 1e-300);
  if ((entries_ - entries_.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
    throw InputError("matrix is not symmetric");
  }
  entries_ = 0.5 * (entries_ + entries_.transpose()).eval();
  if (eigenvalues().minCoeff() <= 0.0) {
    throw InputError("matrix is not positive definite");
  }
}

SpdMatrix SpdMatrix::identity(Eigen::Index d) {
  return SpdMatrix(Eigen::MatrixXd::Identity(d, d));
}

SpdMatrix SpdMatrix::diagonal(const Vector& diag) {
  return SpdMatrix(Eigen::MatrixXd(diag.asDiagonal()));
}

Vector SpdMatrix::eigenvalues() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(entries_, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

Matrix half_sq_cost_matrix(const PointCloud& X, const PointCloud& Y) {
  if (X.dim() != Y.dim()) {
    throw InputError("point clouds have different dimensions");
  }
  const Eigen::Index n = X.size();
  const Eigen::Index m = Y.size();
  Matrix cost(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      cost(i, j) = 0.5 * (X.point(i) - Y.point(j)).squaredNorm();
    }
  }
  return cost;
}

SpdMatrix spd_sqrt(const SpdMatrix& A) {
  const auto es = eigen_of(A);
  const Vector root = es.eigenvalues().cwiseMax(kEigenFloor).cwiseSqrt();
  Eigen::MatrixXd B = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return SpdMatrix(0.5 * (B + B.transpose()));
}

SpdMatrix spd_inv_sqrt(const SpdMatrix& A) {
  const auto es = eigen_of(A);
  const Vector root = es.eigenvalues().cwiseMax(kEigenFloor).cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd B = es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
  return SpdMatrix(0.5 * (B + B.transpose()));
}

void write_point_cloud_csv(std::ostream& out, const PointCloud& cloud, bool with_weights) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (Eigen::Index k = 0; k < cloud.dim(); ++k) {
      if (k > 0) out << ',';
      out << cloud.points()(i, k);
    }
    if (with_weights) out << ',' << cloud.weights()(i);
    out << '\n';
  }
}

void write_point_cloud_csv(const std::string& path, const PointCloud& cloud, bool with_weights) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  write_point_cloud_csv(out, cloud, with_weights);
}

PointCloud read_point_cloud_csv(std::istream& in, bool has_weights) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) numeric = false;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw InputError("line " + std::to_string(line_no) + ": non-numeric cell");
    }
    if (!rows.empty() && values.size() != rows.front().size()) {
      throw InputError("line " + std::to_string(line_no) + ": inconsistent column count");
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw InputError("point cloud CSV has no rows");
  const auto cols = static_cast<Eigen::Index>(rows.front().size());
  const Eigen::Index d = has_weights ? cols - 1 : cols;
  if (d < 1) throw InputError("point cloud CSV has no coordinate columns");
  Matrix points(static_cast<Eigen::Index>(rows.size()), d);
  Vector weights(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < d; ++k) points(r, k) = rows[i][static_cast<std::size_t>(k)];
    if (has_weights) weights(r) = rows[i].back();
  }
  if (has_weights) return PointCloud(std::move(points), std::move(weights));
  return PointCloud(std::move(points));
}

PointCloud read_point_cloud_csv(const std::string& path, bool has_weights) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_point_cloud_csv(in, has_weights);
}

}  // namespace entmap
