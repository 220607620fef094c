// Internal numeric kernels shared by the solvers. Not installed.
#ifndef ENTMAP_SRC_KERNELS_HPP_
#define ENTMAP_SRC_KERNELS_HPP_

#include "entmap/core.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <vector>

namespace entmap::detail {

/// In-place exp over a contiguous buffer, accurate to ~2 ulp. Inputs below
/// -708 flush to zero; inputs above 709 saturate to +inf.
void exp_inplace(double* x, std::size_t n);

/// Sum with a fixed lane layout; reproducible for a fixed length.
double sum(const double* x, std::size_t n);

/// Sum of w[j] * x[j] with the same fixed layout as `sum`.
double dot(const double* w, const double* x, std::size_t n);

/// out[j] = exp(((shift + g[j]) - c[j]) * scale); returns sum of w[j] * out[j]
/// with the lane layout of `dot`.
double exp_shifted_dot(const double* g, const double* c, double shift, double scale, const double* w,
                       double* out, std::size_t n);

/// y[j] += alpha * x[j]
void axpy(double alpha, const double* x, double* y, std::size_t n);

/// Half squared Euclidean cost rows between two point sets, cached as a
/// dense matrix when it fits under `cache_limit` entries and recomputed row
/// by row otherwise.
class CostRows {
 public:
  CostRows(const Matrix& X, const Matrix& Y, std::size_t cache_limit);

  Eigen::Index rows() const { return n_; }
  Eigen::Index cols() const { return m_; }
  Eigen::Index dim() const { return d_; }

  /// Writes row i into out[0..m).
  void row(Eigen::Index i, double* out) const;

  /// Cost from an arbitrary point x (length d) to every target point.
  void row_for(const double* x, double* out) const;

  /// Writes column j into out[0..n).
  void col(Eigen::Index j, double* out) const;

  /// Pointer into the cache, or nullptr when rows are computed on demand.
  const double* cached_row(Eigen::Index i) const {
    return cache_ ? cache_->data() + i * m_ : nullptr;
  }

 private:
  const Matrix* X_;
  Matrix Yt_;  // d x m, each coordinate contiguous over targets
  Eigen::Index n_, m_, d_;
  std::optional<Matrix> cache_;
};

/// One-dimensional Gaussian kernel sums in the log domain:
///   out[i] = log sum_j exp(lw[j] - (t_i - y_j)^2 / (2 eps))
/// for fixed target points t and source points y. Sources are binned so that
/// exp(t y / eps) is a Taylor series around each bin center whose relative
/// truncation error stays below 1e-17.
class GaussLogSum1d {
 public:
  GaussLogSum1d(const double* t, std::size_t n, const double* y, std::size_t m, double eps);

  /// True when the binned evaluation beats the dense sum.
  bool worthwhile() const { return worthwhile_; }
  std::size_t bins() const { return center_.size(); }

  /// lw has m entries and may contain -inf; out has n entries.
  void apply(const double* lw, double* out) const;

 private:
  std::vector<double> t_;       // shifted targets
  std::vector<double> tq_;      // t_^2 / (2 eps)
  std::vector<std::size_t> order_;
  std::vector<std::size_t> start_;
  std::vector<double> center_;
  std::vector<double> delta_;   // shifted source minus its bin center, in order_
  std::vector<double> yq_;      // shifted source^2 / (2 eps), in order_
  double inv_eps_;
  bool worthwhile_;
};

}  // namespace entmap::detail

#endif  // ENTMAP_SRC_KERNELS_HPP_
