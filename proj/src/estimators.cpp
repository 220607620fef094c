#include "entmap/estimators.hpp"

#include "entmap/error.hpp"
#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace entmap {

namespace {

void check_query(const Vector& x, const PointCloud& Y) {
  if (x.size() != Y.dim()) throw InputError("query point has the wrong dimension");
  if (!x.allFinite()) throw InputError("query point has non-finite coordinates");
}

// Softmax average of Y with log-weights (g_j - c(x, Y_j)) / eps + log b_j.
void softmax_average(const double* x, const DualPotentials& pot, const PointCloud& Y, double epsilon,
                     const detail::CostRows& cost, std::vector<double>& buf, double* out) {
  const auto m = static_cast<std::size_t>(Y.size());
  cost.row_for(x, buf.data());
  const double inv_eps = 1.0 / epsilon;
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    buf[j] = (pot.g(jj) - buf[j]) * inv_eps + std::log(Y.weights()(jj));
    top = std::max(top, buf[j]);
  }
  for (auto& v : buf) v -= top;
  detail::exp_inplace(buf.data(), m);
  const double total = detail::sum(buf.data(), m);
  const Eigen::Map<const Eigen::RowVectorXd> w(buf.data(), Y.size());
  Eigen::Map<Eigen::RowVectorXd>(out, Y.dim()) = (w * Y.points()) / total;
}

}  // namespace

std::size_t EstimatorConfig::batch_size(std::size_t n) const {
  if (k < 1) throw InputError("batch count k must be at least 1");
  if (n % k != 0) {
    throw InputError("sample size " + std::to_string(n) + " is not divisible by k = " + std::to_string(k));
  }
  const std::size_t size = n / k;
  if (m != 0 && m != size) {
    throw InputError("k * m = " + std::to_string(k * m) + " does not equal the sample size " + std::to_string(n));
  }
  return size;
}

Vector extended_map(const Vector& x, const DualPotentials& pot, const PointCloud& Y, double epsilon) {
  check_query(x, Y);
  Matrix q(1, x.size());
  q.row(0) = x.transpose();
  return extended_map(q, pot, Y, epsilon).row(0).transpose();
}

Matrix extended_map(const Matrix& queries, const DualPotentials& pot, const PointCloud& Y, double epsilon) {
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
  if (queries.cols() != Y.dim()) throw InputError("query points have the wrong dimension");
  if (pot.g.size() != Y.size()) throw InputError("potentials do not match the target cloud");
  const detail::CostRows cost(queries, Y.points(), 0);
  std::vector<double> buf(static_cast<std::size_t>(Y.size()));
  Matrix out(queries.rows(), Y.dim());
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    softmax_average(queries.row(q).data(), pot, Y, epsilon, cost, buf, out.row(q).data());
  }
  return out;
}

Vector in_sample_map(const Vector& x, const PointCloud& X, const PointCloud& Y, double epsilon,
                     const SolverOptions& options) {
  check_query(x, Y);
  if (X.size() != Y.size()) throw InputError("in-sample estimator needs |X| == |Y|");
  if (X.dim() != Y.dim()) throw InputError("point clouds have different dimensions");
  Matrix replaced = X.points();
  replaced.row(0) = x.transpose();
  const PointCloud X1 = X.uniform() ? PointCloud(std::move(replaced)) : PointCloud(std::move(replaced), X.weights());
  const DualPotentials pot = solve(X1, Y, epsilon, options);
  return extended_map(x, pot, Y, epsilon);
}

BatchedMap::BatchedMap(const PointCloud& X, const PointCloud& Y, const EstimatorConfig& cfg) {
  if (X.size() != Y.size()) throw InputError("batched estimator needs |X| == |Y|");
  const auto n = static_cast<std::size_t>(X.size());
  const std::size_t m = cfg.batch_size(n);
  batches_.reserve(cfg.k);
  for (std::size_t b = 0; b < cfg.k; ++b) {
    const auto start = static_cast<Eigen::Index>(b * m);
    const auto len = static_cast<Eigen::Index>(m);
    batches_.emplace_back(PointCloud(X.points().middleRows(start, len)), PointCloud(Y.points().middleRows(start, len)),
                          cfg.epsilon, cfg.solver);
  }
}

Matrix BatchedMap::evaluate(const Matrix& queries) const {
  Matrix total = batches_.front().evaluate(queries);
  for (std::size_t b = 1; b < batches_.size(); ++b) total += batches_[b].evaluate(queries);
  return total / static_cast<double>(batches_.size());
}

Vector BatchedMap::evaluate(const Vector& x) const {
  Matrix q(1, x.size());
  q.row(0) = x.transpose();
  return evaluate(q).row(0).transpose();
}

Vector batched_map(const Vector& x, const PointCloud& X, const PointCloud& Y, const EstimatorConfig& cfg) {
  if (X.size() != Y.size()) throw InputError("batched estimator needs |X| == |Y|");
  check_query(x, Y);
  const auto n = static_cast<std::size_t>(X.size());
  const std::size_t m = cfg.batch_size(n);
  Vector total = Vector::Zero(Y.dim());
  for (std::size_t b = 0; b < cfg.k; ++b) {
    const auto start = static_cast<Eigen::Index>(b * m);
    const auto len = static_cast<Eigen::Index>(m);
    total += in_sample_map(x, PointCloud(X.points().middleRows(start, len)),
                           PointCloud(Y.points().middleRows(start, len)), cfg.epsilon, cfg.solver);
  }
  return total / static_cast<double>(cfg.k);
}

GaussianEntropicMap::GaussianEntropicMap(Vector x0, const SpdMatrix& S0, Vector x1, const SpdMatrix& S1,
                                         double epsilon)
    : b_(std::move(x1)) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InputError("epsilon must be positive");
  const Eigen::Index d = S0.dim();
  if (S1.dim() != d || x0.size() != d || b_.size() != d) throw InputError("Gaussian parameters have mismatched dimensions");
  const Eigen::MatrixXd root = spd_sqrt(S0).matrix();
  const Eigen::MatrixXd inv_root = spd_inv_sqrt(S0).matrix();
  const Eigen::MatrixXd inner = root * S1.matrix() * root;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
  if (es.info() != Eigen::Success) throw InputError("eigendecomposition failed");
  // (N + eps^2/4)^{1/2} - eps/2 = N / ((N + eps^2/4)^{1/2} + eps/2), stable for large eps
  const double h = 0.5 * epsilon;
  Vector shrunk(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lam = std::max(es.eigenvalues()(i), 0.0);
    shrunk(i) = lam / (std::sqrt(lam + h * h) + h);
  }
  const Eigen::MatrixXd middle = es.eigenvectors() * shrunk.asDiagonal() * es.eigenvectors().transpose();
  A_ = inv_root * middle * inv_root;
  A_ = 0.5 * (A_ + A_.transpose()).eval();
  b_ -= A_ * x0;
}

Vector GaussianEntropicMap::operator()(const Vector& x) const {
  if (x.size() != b_.size()) throw InputError("query point has the wrong dimension");
  return b_ + A_ * x;
}

Matrix GaussianEntropicMap::apply(const Matrix& points) const {
  if (points.cols() != b_.size()) throw InputError("query points have the wrong dimension");
  Matrix out = points * A_.transpose();
  out.rowwise() += b_.transpose();
  return out;
}

Vector gaussian_entropic_map(const Vector& x0, const SpdMatrix& S0, const Vector& x1, const SpdMatrix& S1,
                             double epsilon, const Vector& x) {
  return GaussianEntropicMap(x0, S0, x1, S1, epsilon)(x);
}

}  // namespace entmap
