#include "kernels.hpp"

#include "entmap/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace entmap::detail {

namespace {

using v8d = double __attribute__((vector_size(64)));
using v8i = long long __attribute__((vector_size(64)));

inline v8d load(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store(double* p, v8d v) { std::memcpy(p, &v, sizeof(v)); }

// Cody-Waite reduction x = k ln2 + r, |r| <= ln2/2, then a degree-13 Taylor
// polynomial; truncation error is below 1e-17 relative.
inline __attribute__((always_inline)) v8d exp8(v8d x) {
  const v8d lo = x * 0.0 - 708.0;
  const v8d hi = x * 0.0 + 709.0;
  const auto under = x < lo;
  const auto over = x > hi;
  x = under ? lo : x;
  x = over ? hi : x;
  constexpr double shifter = 6755399441055744.0;  // 1.5 * 2^52
  const v8d sh = x * 1.4426950408889634 + shifter;
  const v8d k = sh - shifter;
  const v8d r = (x - k * 6.93147180369123816490e-01) - k * 1.90821492927058770002e-10;
  v8d p = r * (1.0 / 6227020800.0) + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const v8i bits = ((v8i)sh + 1023) << 52;
  v8d out = p * (v8d)bits;
  const v8d zero = x * 0.0;
  const v8d inf = zero + std::numeric_limits<double>::infinity();
  out = under ? zero : out;
  out = over ? inf : out;
  return out;
}

}  // namespace

void exp_inplace(double* x, std::size_t n) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) store(x + j, exp8(load(x + j)));
  if (j < n) {
    double tail[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::memcpy(tail, x + j, (n - j) * sizeof(double));
    const v8d v = exp8(load(tail));
    store(tail, v);
    std::memcpy(x + j, tail, (n - j) * sizeof(double));
  }
}

double sum(const double* x, std::size_t n) {
  v8d acc = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) acc += load(x + j);
  double total = 0.0;
  for (int l = 0; l < 8; ++l) total += acc[l];
  for (; j < n; ++j) total += x[j];
  return total;
}

double dot(const double* w, const double* x, std::size_t n) {
  v8d acc = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) acc += load(w + j) * load(x + j);
  double total = 0.0;
  for (int l = 0; l < 8; ++l) total += acc[l];
  for (; j < n; ++j) total += w[j] * x[j];
  return total;
}

double exp_shifted_dot(const double* g, const double* c, double shift, double scale, const double* w,
                       double* out, std::size_t n) {
  v8d acc = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    const v8d e = exp8(((shift + load(g + j)) - load(c + j)) * scale);
    store(out + j, e);
    acc += load(w + j) * e;
  }
  double total = 0.0;
  for (int l = 0; l < 8; ++l) total += acc[l];
  if (j < n) {
    double tail[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    for (std::size_t t = j; t < n; ++t) tail[t - j] = ((shift + g[t]) - c[t]) * scale;
    store(tail, exp8(load(tail)));
    for (std::size_t t = j; t < n; ++t) {
      out[t] = tail[t - j];
      total += w[t] * out[t];
    }
  }
  return total;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) store(y + j, load(y + j) + alpha * load(x + j));
  for (; j < n; ++j) y[j] += alpha * x[j];
}

CostRows::CostRows(const Matrix& X, const Matrix& Y, std::size_t cache_limit)
    : X_(&X), Yt_(Y.transpose()), n_(X.rows()), m_(Y.rows()), d_(X.cols()) {
  if (X.cols() != Y.cols()) throw InputError("point clouds have different dimensions");
  if (static_cast<std::size_t>(n_) * static_cast<std::size_t>(m_) <= cache_limit) {
    cache_.emplace(n_, m_);
    for (Eigen::Index i = 0; i < n_; ++i) row_for(X.row(i).data(), cache_->data() + i * m_);
  }
}

void CostRows::row(Eigen::Index i, double* out) const {
  if (cache_) {
    std::memcpy(out, cache_->data() + i * m_, static_cast<std::size_t>(m_) * sizeof(double));
    return;
  }
  row_for(X_->row(i).data(), out);
}

void CostRows::row_for(const double* x, double* out) const {
  const double* y0 = Yt_.data();
  const double x0 = x[0];
  for (Eigen::Index j = 0; j < m_; ++j) {
    const double diff = y0[j] - x0;
    out[j] = diff * diff;
  }
  for (Eigen::Index k = 1; k < d_; ++k) {
    const double* yk = Yt_.data() + k * m_;
    const double xk = x[k];
    for (Eigen::Index j = 0; j < m_; ++j) {
      const double diff = yk[j] - xk;
      out[j] += diff * diff;
    }
  }
  for (Eigen::Index j = 0; j < m_; ++j) out[j] *= 0.5;
}

void CostRows::col(Eigen::Index j, double* out) const {
  for (Eigen::Index i = 0; i < n_; ++i) {
    if (cache_) {
      out[i] = (*cache_)(i, j);
      continue;
    }
    double acc = 0.0;
    for (Eigen::Index k = 0; k < d_; ++k) {
      const double diff = Yt_(k, j) - (*X_)(i, k);
      acc += diff * diff;
    }
    out[i] = 0.5 * acc;
  }
}

namespace {

// |t delta| / eps <= kRadius on every bin; with kTerms terms the relative
// truncation error is at most e^(2r) r^kTerms / kTerms! < 1e-17.
constexpr double kRadius = 1.0;
constexpr std::size_t kTerms = 20;
constexpr std::size_t kChunk = 256;

}  // namespace

GaussLogSum1d::GaussLogSum1d(const double* t, std::size_t n, const double* y, std::size_t m, double eps)
    : inv_eps_(1.0 / eps), worthwhile_(false) {
  if (n == 0 || m == 0) return;
  const auto [tlo, thi] = std::minmax_element(t, t + n);
  const double shift = 0.5 * (*tlo + *thi);
  const double half = 0.5 * (*thi - *tlo);
  t_.resize(n);
  tq_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t_[i] = t[i] - shift;
    tq_[i] = 0.5 * t_[i] * t_[i] * inv_eps_;
  }
  std::vector<double> ys(m);
  for (std::size_t j = 0; j < m; ++j) ys[j] = y[j] - shift;
  order_.resize(m);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return ys[a] < ys[b]; });
  const double width = half > 0.0 ? 2.0 * kRadius * eps / half : std::numeric_limits<double>::infinity();
  delta_.resize(m);
  yq_.resize(m);
  for (std::size_t k = 0; k < m;) {
    const double first = ys[order_[k]];
    std::size_t e = k + 1;
    while (e < m && ys[order_[e]] - first <= width) ++e;
    const double center = 0.5 * (first + ys[order_[e - 1]]);
    start_.push_back(k);
    center_.push_back(center);
    for (std::size_t q = k; q < e; ++q) {
      const double v = ys[order_[q]];
      delta_[q] = v - center;
      yq_[q] = 0.5 * v * v * inv_eps_;
    }
    k = e;
  }
  start_.push_back(m);
  // Per target: bins * (terms + exp) against m fused exp-and-add operations.
  worthwhile_ = m >= 32 && 2 * center_.size() * (kTerms + 16) < 12 * m;
}

void GaussLogSum1d::apply(const double* lw, double* out) const {
  const std::size_t bins = center_.size();
  std::vector<double> top(bins), moments(bins * kTerms, 0.0);
  for (std::size_t b = 0; b < bins; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t q = start_[b]; q < start_[b + 1]; ++q) mx = std::max(mx, lw[order_[q]] - yq_[q]);
    top[b] = mx;
    if (!std::isfinite(mx)) continue;
    double* mom = moments.data() + b * kTerms;
    for (std::size_t q = start_[b]; q < start_[b + 1]; ++q) {
      const double lv = lw[order_[q]] - yq_[q];
      if (lv == -std::numeric_limits<double>::infinity()) continue;
      double term = std::exp(lv - mx);
      const double step = delta_[q] * inv_eps_;
      for (std::size_t k = 0; k < kTerms; ++k) {
        mom[k] += term;
        term *= step / static_cast<double>(k + 1);
      }
    }
  }

  const std::size_t n = t_.size();
  double mx[kChunk], acc[kChunk], ex[kChunk], poly[kChunk];
  for (std::size_t i0 = 0; i0 < n; i0 += kChunk) {
    const std::size_t len = std::min(kChunk, n - i0);
    const double* ti = t_.data() + i0;
    std::fill(mx, mx + len, -std::numeric_limits<double>::infinity());
    std::fill(acc, acc + len, 0.0);
    for (std::size_t b = 0; b < bins; ++b) {
      if (!std::isfinite(top[b])) continue;
      const double slope = center_[b] * inv_eps_;
      for (std::size_t r = 0; r < len; ++r) mx[r] = std::max(mx[r], top[b] + ti[r] * slope);
    }
    for (std::size_t b = 0; b < bins; ++b) {
      if (!std::isfinite(top[b])) continue;
      const double slope = center_[b] * inv_eps_;
      for (std::size_t r = 0; r < len; ++r) ex[r] = (top[b] + ti[r] * slope) - mx[r];
      exp_inplace(ex, len);
      const double* mom = moments.data() + b * kTerms;
      std::fill(poly, poly + len, mom[kTerms - 1]);
      for (std::size_t k = kTerms - 1; k-- > 0;) {
        for (std::size_t r = 0; r < len; ++r) poly[r] = poly[r] * ti[r] + mom[k];
      }
      for (std::size_t r = 0; r < len; ++r) acc[r] += ex[r] * poly[r];
    }
    for (std::size_t r = 0; r < len; ++r) out[i0 + r] = (mx[r] + std::log(acc[r])) - tq_[i0 + r];
  }
}

}  // namespace entmap::detail
