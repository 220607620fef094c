#include "entmap/error.hpp"
#include "entmap/estimators.hpp"
#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

namespace entmap {

namespace {

constexpr Eigen::Index kQueryBlock = 128;
constexpr Eigen::Index kRowTile = 256;
constexpr double kScaleLo = 1e-100;
constexpr double kScaleHi = 1e100;
constexpr double kMaxOmega = 1.95;
constexpr double kBlowup = 10.0;

using ColMatrix = Eigen::MatrixXd;

}  // namespace

InSampleMap::InSampleMap(PointCloud X, PointCloud Y, double epsilon, const SolverOptions& options)
    : X_(std::move(X)), Y_(std::move(Y)), epsilon_(epsilon), options_(options) {
  if (X_.size() != Y_.size()) throw InputError("in-sample estimator needs |X| == |Y|");
  base_ = solve(X_, Y_, epsilon_, options_);
  if (options_.fast_1d && X_.dim() == 1) {
    const auto n = static_cast<std::size_t>(X_.size());
    const detail::GaussLogSum1d rows(X_.points().data(), n, Y_.points().data(), n, epsilon_);
    const detail::GaussLogSum1d cols(Y_.points().data(), n, X_.points().data(), n, epsilon_);
    if (rows.worthwhile() && cols.worthwhile()) return;
  }
  const auto entries = static_cast<std::size_t>(X_.size()) * static_cast<std::size_t>(Y_.size());
  if (entries <= options_.cost_cache_entries) {
    kernel_ = plan_density(base_, X_, Y_).p;
    kernel_.row(0).setZero();
    cached_ = true;
  }
}

Vector InSampleMap::evaluate(const Vector& x) const {
  Matrix q(1, x.size());
  q.row(0) = x.transpose();
  return evaluate(q).row(0).transpose();
}

Matrix InSampleMap::evaluate(const Matrix& queries) const {
  if (queries.cols() != Y_.dim()) throw InputError("query points have the wrong dimension");
  if (!queries.allFinite()) throw InputError("query points have non-finite coordinates");
  Matrix out(queries.rows(), Y_.dim());
  for (Eigen::Index start = 0; start < queries.rows(); start += kQueryBlock) {
    const Eigen::Index len = std::min(kQueryBlock, queries.rows() - start);
    out.middleRows(start, len) = evaluate_block(queries.middleRows(start, len));
  }
  return out;
}

Vector InSampleMap::fallback(const Vector& x, const Vector& f0) const {
  Matrix replaced = X_.points();
  replaced.row(0) = x.transpose();
  const PointCloud X1 = X_.uniform() ? PointCloud(std::move(replaced)) : PointCloud(std::move(replaced), X_.weights());
  Vector f_init = base_.f;
  f_init(0) = f0(0);
  const DualPotentials pot = solve(X1, Y_, epsilon_, f_init, base_.g, options_);
  return extended_map(x, pot, Y_, epsilon_);
}

// Scaling form around the base solution: the plan for query q is
// u_iq K_ij v_jq with K the base plan density (row 0 replaced by the query
// row R_q), and u = v = 1 is the warm start.
Matrix InSampleMap::evaluate_block(const Matrix& queries) const {
  const Eigen::Index n = X_.size();
  const Eigen::Index m = Y_.size();
  const Eigen::Index Q = queries.rows();
  const auto mu = static_cast<std::size_t>(m);
  const Vector& a = X_.weights();
  const Vector& b = Y_.weights();
  const double eps = epsilon_;
  const double inv_eps = 1.0 / eps;
  Matrix out(Q, Y_.dim());

  if (m == 1) {
    out.rowwise() = Y_.point(0);
    return out;
  }

  // Query rows of the density and the extended potential at each query.
  const detail::CostRows qcost(queries, Y_.points(), 0);
  Matrix R(Q, m);
  Vector f0(Q);
  {
    std::vector<double> buf(mu);
    for (Eigen::Index q = 0; q < Q; ++q) {
      qcost.row_for(queries.row(q).data(), buf.data());
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < mu; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        R(q, jj) = (base_.g(jj) - buf[j]) * inv_eps + std::log(b(jj));
        top = std::max(top, R(q, jj));
      }
      double total = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) total += std::exp(R(q, j) - top);
      f0(q) = -eps * (top + std::log(total));
      for (std::size_t j = 0; j < mu; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        R(q, jj) = std::exp(((f0(q) + base_.g(jj)) - buf[j]) * inv_eps);
      }
    }
  }

  double omega = 1.0;
  if (options_.over_relaxation && std::isfinite(base_.contraction) && base_.contraction < 1.0) {
    omega = std::min(kMaxOmega, 2.0 / (1.0 + std::sqrt(1.0 - base_.contraction)));
  }

  std::optional<detail::GaussLogSum1d> rows_1d, cols_1d;
  if (!cached_ && options_.fast_1d && X_.dim() == 1) {
    const auto nn = static_cast<std::size_t>(n);
    rows_1d.emplace(X_.points().data(), nn, Y_.points().data(), mu, eps);
    cols_1d.emplace(Y_.points().data(), mu, X_.points().data(), nn, eps);
    if (!rows_1d->worthwhile() || !cols_1d->worthwhile()) {
      rows_1d.reset();
      cols_1d.reset();
    }
  }
  const bool fast = rows_1d.has_value();

  std::unique_ptr<detail::CostRows> xcost;
  if (!cached_ && !fast) xcost = std::make_unique<detail::CostRows>(X_.points(), Y_.points(), 0);
  std::vector<double> crow(mu);
  Matrix tile_rows;
  if (!cached_ && !fast) tile_rows.resize(std::min(kRowTile, n), m);
  auto fill_tile = [&](Eigen::Index r0, Eigen::Index rows) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index i = r0 + r;
      double* dst = tile_rows.row(r).data();
      if (i == 0) {
        std::fill(dst, dst + m, 0.0);
        continue;
      }
      xcost->row(i, crow.data());
      detail::exp_shifted_dot(base_.g.data(), crow.data(), base_.f(i), inv_eps, b.data(), dst, mu);
    }
  };

  std::vector<Eigen::Index> active(static_cast<std::size_t>(Q));
  for (Eigen::Index q = 0; q < Q; ++q) active[static_cast<std::size_t>(q)] = q;
  std::vector<bool> needs_fallback(static_cast<std::size_t>(Q), false);

  ColMatrix U = ColMatrix::Ones(n, Q);
  ColMatrix V = ColMatrix::Ones(m, Q);
  ColMatrix Ra = R.transpose();  // m x active
  Vector col_violation = Vector::Zero(Q);
  Vector best = Vector::Constant(Q, std::numeric_limits<double>::infinity());

  // Column sums of the kernel against the row scalings, binned 1-D path.
  Vector lw_rows(fast ? m : 0), lw_cols(fast ? n : 0), lo_rows(fast ? n : 0), lo_cols(fast ? m : 0);
  auto column_sums = [&](const ColMatrix& Ucur, ColMatrix& dst) {
    for (Eigen::Index c = 0; c < Ucur.cols(); ++c) {
      lw_cols(0) = -std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 1; i < n; ++i) lw_cols(i) = std::log(a(i)) + base_.f(i) * inv_eps + std::log(Ucur(i, c));
      cols_1d->apply(lw_cols.data(), lo_cols.data());
      for (Eigen::Index j = 0; j < m; ++j) {
        dst(j, c) = std::exp(base_.g(j) * inv_eps + lo_cols(j)) + Ra(j, c) * a(0) * Ucur(0, c);
      }
    }
  };

  auto finish = [&](Eigen::Index local, Eigen::Index q) {
    // Output from the state's column scalings: row 0 of the plan is R_q * v.
    double total = 0.0;
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(Y_.dim());
    for (Eigen::Index j = 0; j < m; ++j) {
      const double w = b(j) * Ra(j, local) * V(j, local);
      total += w;
      acc += w * Y_.point(j);
    }
    out.row(q) = acc / total;
  };

  for (std::size_t iter = 0; !active.empty(); ++iter) {
    const auto A = static_cast<Eigen::Index>(active.size());
    const bool first = iter == 0;
    const ColMatrix BV = b.asDiagonal() * V;
    ColMatrix C = ColMatrix::Zero(m, A);
    ColMatrix C_old;
    if (first) C_old = ColMatrix::Zero(m, A);
    Vector row_violation = Vector::Zero(A);

    auto update_rows = [&](Eigen::Index r0, Eigen::Index rows, const ColMatrix& Z) {
      auto Ub = U.middleRows(r0, rows);
      for (Eigen::Index c = 0; c < A; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
          const double mass = Ub(r, c) * Z(r, c);
          row_violation(c) += a(r0 + r) * std::abs(mass - 1.0);
          Ub(r, c) = omega == 1.0 ? 1.0 / Z(r, c) : std::pow(Ub(r, c), 1.0 - omega) * std::pow(Z(r, c), -omega);
        }
      }
    };

    if (fast) {
      ColMatrix Z(n, A);
      for (Eigen::Index c = 0; c < A; ++c) {
        for (Eigen::Index j = 0; j < m; ++j) lw_rows(j) = std::log(b(j)) + base_.g(j) * inv_eps + std::log(V(j, c));
        rows_1d->apply(lw_rows.data(), lo_rows.data());
        for (Eigen::Index i = 1; i < n; ++i) Z(i, c) = std::exp(base_.f(i) * inv_eps + lo_rows(i));
        Z(0, c) = Ra.col(c).cwiseProduct(BV.col(c)).sum();
      }
      if (first) column_sums(U, C_old);
      update_rows(0, n, Z);
      column_sums(U, C);
    } else {
      for (Eigen::Index r0 = 0; r0 < n; r0 += kRowTile) {
        const Eigen::Index rows = std::min(kRowTile, n - r0);
        if (!cached_) fill_tile(r0, rows);
        const auto K = cached_ ? Eigen::Ref<const Matrix>(kernel_.middleRows(r0, rows))
                               : Eigen::Ref<const Matrix>(tile_rows.topRows(rows));
        ColMatrix Z = K * BV;
        if (r0 == 0) Z.row(0) = (Ra.cwiseProduct(BV)).colwise().sum();
        auto Ub = U.middleRows(r0, rows);
        if (first) {
          C_old.noalias() += K.transpose() * (a.segment(r0, rows).asDiagonal() * Ub);
          if (r0 == 0) C_old += Ra * (a(0) * Ub.row(0)).asDiagonal();
        }
        update_rows(r0, rows, Z);
        C.noalias() += K.transpose() * (a.segment(r0, rows).asDiagonal() * Ub);
        if (r0 == 0) C += Ra * (a(0) * Ub.row(0)).asDiagonal();
      }
    }

    std::vector<Eigen::Index> keep;
    bool blowup = false;
    for (Eigen::Index c = 0; c < A; ++c) {
      const Eigen::Index q = active[static_cast<std::size_t>(c)];
      if (first) {
        double cv = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) cv += b(j) * std::abs(V(j, c) * C_old(j, c) - 1.0);
        col_violation(q) = cv;
      }
      const double res = row_violation(c) + col_violation(q);
      if (res <= options_.tol) {
        finish(c, q);
        continue;
      }
      if (!std::isfinite(res) || iter >= options_.max_iter) {
        needs_fallback[static_cast<std::size_t>(q)] = true;
        continue;
      }
      if (res > kBlowup * best(q)) blowup = true;
      best(q) = std::min(best(q), res);
      double cv = 0.0;
      bool in_range = true;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double mass = V(j, c) * C(j, c);
        V(j, c) = omega == 1.0 ? 1.0 / C(j, c) : std::pow(V(j, c), 1.0 - omega) * std::pow(C(j, c), -omega);
        if (omega != 1.0) cv += b(j) * std::abs(std::pow(mass, 1.0 - omega) - 1.0);
        if (!(V(j, c) > kScaleLo && V(j, c) < kScaleHi)) in_range = false;
      }
      const auto Ucol = U.col(c);
      if (!(Ucol.minCoeff() > kScaleLo && Ucol.maxCoeff() < kScaleHi)) in_range = false;
      if (!in_range) {
        needs_fallback[static_cast<std::size_t>(q)] = true;
        continue;
      }
      col_violation(q) = cv;
      keep.push_back(c);
    }
    if (blowup) omega = 1.0;

    if (static_cast<Eigen::Index>(keep.size()) != A) {
      ColMatrix U2(n, static_cast<Eigen::Index>(keep.size()));
      ColMatrix V2(m, static_cast<Eigen::Index>(keep.size()));
      ColMatrix R2(m, static_cast<Eigen::Index>(keep.size()));
      std::vector<Eigen::Index> next;
      for (std::size_t t = 0; t < keep.size(); ++t) {
        const auto tt = static_cast<Eigen::Index>(t);
        U2.col(tt) = U.col(keep[t]);
        V2.col(tt) = V.col(keep[t]);
        R2.col(tt) = Ra.col(keep[t]);
        next.push_back(active[static_cast<std::size_t>(keep[t])]);
      }
      U = std::move(U2);
      V = std::move(V2);
      Ra = std::move(R2);
      active = std::move(next);
    }
  }

  for (Eigen::Index q = 0; q < Q; ++q) {
    if (!needs_fallback[static_cast<std::size_t>(q)]) continue;
    out.row(q) = fallback(queries.row(q).transpose(), f0.segment(q, 1)).transpose();
  }
  return out;
}

}  // namespace entmap
