#include "entmap/sinkhorn.hpp"

#include "entmap/error.hpp"
#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace entmap {

namespace {

// Row or column masses outside this band are recomputed with a max shift.
constexpr double kMassLo = 1e-250;
constexpr double kMassHi = 1e250;

// Over-relaxation starts once the mean log-residual decrease over two
// consecutive windows agrees to this relative tolerance.
constexpr std::size_t kRateWindow = 8;
constexpr double kRateAgreement = 0.1;
constexpr double kMaxOmega = 1.95;
constexpr double kBlowup = 10.0;
constexpr std::size_t kMaxRelaxFailures = 3;
constexpr double kOmegaStep = 0.01;

void validate(const PointCloud& X, const PointCloud& Y, double epsilon, const SolverOptions& opt) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InputError("epsilon must be positive");
  if (!(opt.tol > 0.0)) throw InputError("tolerance must be positive");
  if (X.dim() != Y.dim()) throw InputError("point clouds have different dimensions");
  if ((X.weights().array() <= 0.0).any() || (Y.weights().array() <= 0.0).any()) {
    throw InputError("solver requires strictly positive weights");
  }
}

void check_potentials(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y) {
  if (pot.f.size() != X.size() || pot.g.size() != Y.size()) {
    throw InputError("potentials do not match the point clouds");
  }
  if (X.dim() != Y.dim()) throw InputError("point clouds have different dimensions");
  if (!(pot.epsilon > 0.0)) throw InputError("potentials carry a non-positive epsilon");
}

double log_sum_exp(const double* v, std::size_t n, std::vector<double>& scratch) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) top = std::max(top, v[i]);
  if (!std::isfinite(top)) return top;
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = v[i] - top;
  detail::exp_inplace(scratch.data(), n);
  return top + std::log(detail::sum(scratch.data(), n));
}

DualPotentials run_sinkhorn(const PointCloud& X, const PointCloud& Y, double epsilon, Vector f, Vector g,
                            const SolverOptions& opt) {
  validate(X, Y, epsilon, opt);
  if (f.size() != X.size() || g.size() != Y.size()) {
    throw InputError("initial potentials do not match the point clouds");
  }
  const detail::CostRows cost(X.points(), Y.points(), opt.cost_cache_entries);
  const Eigen::Index n = X.size();
  const Eigen::Index m = Y.size();
  const auto mu = static_cast<std::size_t>(m);
  const Vector& a = X.weights();
  const Vector& b = Y.weights();
  const Vector log_a = a.array().log();
  const Vector log_b = b.array().log();
  const double inv_eps = 1.0 / epsilon;

  std::vector<double> crow(mu), buf(mu), scratch, ccol(static_cast<std::size_t>(n)), tmp(static_cast<std::size_t>(n));
  Vector colacc(m), colold(m), prev_f(n), col_log(m);

  std::optional<detail::GaussLogSum1d> rows_1d, cols_1d;
  if (opt.fast_1d && X.dim() == 1) {
    rows_1d.emplace(X.points().data(), static_cast<std::size_t>(n), Y.points().data(), mu, epsilon);
    cols_1d.emplace(Y.points().data(), mu, X.points().data(), static_cast<std::size_t>(n), epsilon);
    if (!rows_1d->worthwhile() || !cols_1d->worthwhile()) {
      rows_1d.reset();
      cols_1d.reset();
    }
  }
  Vector lw_rows, lw_cols, row_log;
  if (rows_1d) {
    lw_rows.resize(m);
    lw_cols.resize(n);
    row_log.resize(n);
  }

  DualPotentials out;
  out.epsilon = epsilon;
  out.tolerance = opt.tol;

  double omega = 1.0;
  double omega_cap = kMaxOmega;
  bool relaxing = false;
  std::size_t relax_failures = opt.over_relaxation ? 0 : kMaxRelaxFailures;
  double relaxed_best = 0.0;
  std::vector<double> log_res;
  double best = std::numeric_limits<double>::infinity();
  double col_violation = 0.0;

  for (std::size_t iter = 0;; ++iter) {
    const bool first = iter == 0;
    prev_f = f;
    double row_violation = 0.0;

    if (rows_1d) {
      lw_rows = log_b + g * inv_eps;
      rows_1d->apply(lw_rows.data(), row_log.data());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double log_mass = f(i) * inv_eps + row_log(i);
        row_violation += a(i) * std::abs(std::exp(std::min(log_mass, 700.0)) - 1.0);
        f(i) -= omega * epsilon * log_mass;
      }
      if (first) {
        lw_cols = log_a + prev_f * inv_eps;
        cols_1d->apply(lw_cols.data(), col_log.data());
        col_violation = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
          col_violation += b(j) * std::abs(std::exp(std::min(g(j) * inv_eps + col_log(j), 700.0)) - 1.0);
        }
      }
      lw_cols = log_a + f * inv_eps;
      cols_1d->apply(lw_cols.data(), col_log.data());
      col_log += g * inv_eps;
    } else {
      colacc.setZero();
      if (first) colold.setZero();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double* c = cost.cached_row(i);
        if (c == nullptr) {
          cost.row(i, crow.data());
          c = crow.data();
        }
        const double fi = f(i);
        const double mass = detail::exp_shifted_dot(g.data(), c, fi, inv_eps, b.data(), buf.data(), mu);
        const double ai = a(i);
        if (mass > kMassLo && mass < kMassHi) {
          row_violation += ai * std::abs(mass - 1.0);
          const double log_mass = std::log(mass);
          f(i) = fi - omega * epsilon * log_mass;
          if (first) detail::axpy(ai, buf.data(), colold.data(), mu);
          const double scale = ai * (omega == 1.0 ? 1.0 / mass : std::exp(-omega * log_mass));
          detail::axpy(scale, buf.data(), colacc.data(), mu);
          continue;
        }
        // Shifted path for rows far from balanced (cold starts at small epsilon).
        for (std::size_t j = 0; j < mu; ++j) {
          buf[j] = (g(static_cast<Eigen::Index>(j)) - c[j]) * inv_eps + log_b(static_cast<Eigen::Index>(j));
        }
        const double log_mass = fi * inv_eps + log_sum_exp(buf.data(), mu, scratch);
        row_violation += ai * std::abs(std::exp(std::min(log_mass, 700.0)) - 1.0);
        f(i) = fi - omega * epsilon * log_mass;
        for (std::size_t j = 0; j < mu; ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          const double base = (g(jj) - c[j]) * inv_eps;
          if (first) colold(jj) += ai * std::exp(std::min(base + fi * inv_eps, 700.0));
          colacc(jj) += ai * std::exp(base + f(i) * inv_eps);
        }
      }
      if (first) {
        col_violation = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) col_violation += b(j) * std::abs(colold(j) - 1.0);
      }
      for (Eigen::Index j = 0; j < m; ++j) {
        const double mass = colacc(j);
        if (mass > kMassLo && mass < kMassHi) {
          col_log(j) = std::log(mass);
          continue;
        }
        cost.col(j, ccol.data());
        for (Eigen::Index i = 0; i < n; ++i) {
          tmp[static_cast<std::size_t>(i)] = (f(i) - ccol[static_cast<std::size_t>(i)]) * inv_eps + log_a(i);
        }
        col_log(j) = g(j) * inv_eps + log_sum_exp(tmp.data(), static_cast<std::size_t>(n), scratch);
      }
    }

    const double res = row_violation + col_violation;
    if (opt.record_trace) out.residual_trace.push_back(res);
    if (std::isnan(res)) {
      throw ConvergenceError("Sinkhorn produced non-finite values", best, iter);
    }
    best = std::min(best, res);
    if (res <= opt.tol) {
      out.f = std::move(prev_f);
      out.g = std::move(g);
      out.iterations = iter;
      out.marginal_residual = res;
      return gauge_fixed(std::move(out), a);
    }
    if (iter >= opt.max_iter) {
      throw ConvergenceError("Sinkhorn did not reach tolerance within " + std::to_string(opt.max_iter) +
                                 " iterations",
                             best, iter);
    }

    col_violation = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      g(j) -= omega * epsilon * col_log(j);
      if (omega != 1.0) col_violation += b(j) * std::abs(std::exp((1.0 - omega) * col_log(j)) - 1.0);
    }

    // Relaxation schedule. The mean log-residual decrease over two
    // consecutive windows gives the observed rate lambda under the current
    // factor omega; for two-cyclic iterations the plain rate is then
    // theta = (lambda + omega - 1)^2 / (lambda omega^2), and the optimal
    // factor is 2 / (1 + sqrt(1 - theta)).
    log_res.push_back(std::log(std::max(res, 1e-300)));
    if (relaxing) {
      relaxed_best = std::min(relaxed_best, res);
      if (!(res < kBlowup * relaxed_best)) {
        omega = 1.0;
        relaxing = false;
        ++relax_failures;
        omega_cap = 1.0 + 0.5 * (omega_cap - 1.0);
        log_res.clear();
        continue;
      }
    }
    const std::size_t h = log_res.size();
    if (h > 2 * kRateWindow) {
      const double r1 = (log_res[h - 1] - log_res[h - 1 - kRateWindow]) / kRateWindow;
      const double r2 = (log_res[h - 1 - kRateWindow] - log_res[h - 1 - 2 * kRateWindow]) / kRateWindow;
      if (r1 < 0.0 && r2 < 0.0 && std::abs(r1 - r2) <= kRateAgreement * std::abs(r1)) {
        const double lambda = std::exp(r1);
        const double theta = std::min(1.0, (lambda + omega - 1.0) * (lambda + omega - 1.0) / (lambda * omega * omega));
        out.contraction = theta;
        const double target = std::min(omega_cap, 2.0 / (1.0 + std::sqrt(1.0 - theta)));
        if (relax_failures < kMaxRelaxFailures && target > omega + kOmegaStep) {
          omega = target;
          relaxing = true;
          relaxed_best = res;
          log_res.clear();
        }
      }
    }
  }
}

}  // namespace

DualPotentials solve(const PointCloud& X, const PointCloud& Y, double epsilon, const SolverOptions& options) {
  return run_sinkhorn(X, Y, epsilon, Vector::Zero(X.size()), Vector::Zero(Y.size()), options);
}

DualPotentials solve(const PointCloud& X, const PointCloud& Y, double epsilon, const Vector& f_init,
                     const Vector& g_init, const SolverOptions& options) {
  return run_sinkhorn(X, Y, epsilon, f_init, g_init, options);
}

DualPotentials gauge_fixed(DualPotentials pot, const Vector& x_weights) {
  if (x_weights.size() != pot.f.size()) throw InputError("weights do not match potentials");
  const double shift = x_weights.dot(pot.f);
  pot.f.array() -= shift;
  pot.g.array() += shift;
  return pot;
}

PlanDensity plan_density(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y) {
  check_potentials(pot, X, Y);
  const detail::CostRows cost(X.points(), Y.points(), 0);
  const Eigen::Index n = X.size();
  const Eigen::Index m = Y.size();
  const double inv_eps = 1.0 / pot.epsilon;
  PlanDensity out{Matrix(n, m)};
  std::vector<double> crow(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < n; ++i) {
    cost.row(i, crow.data());
    double* row = out.p.row(i).data();
    for (Eigen::Index j = 0; j < m; ++j) {
      row[j] = ((pot.f(i) + pot.g(j)) - crow[static_cast<std::size_t>(j)]) * inv_eps;
    }
    detail::exp_inplace(row, static_cast<std::size_t>(m));
  }
  return out;
}

double eot_cost(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y) {
  check_potentials(pot, X, Y);
  if (!pot.converged()) {
    throw ConvergenceError("potentials did not converge", pot.marginal_residual, pot.iterations);
  }
  const detail::CostRows cost(X.points(), Y.points(), 0);
  const Eigen::Index n = X.size();
  const Eigen::Index m = Y.size();
  const Vector& a = X.weights();
  const Vector& b = Y.weights();
  const double inv_eps = 1.0 / pot.epsilon;
  std::vector<double> crow(static_cast<std::size_t>(m));
  double dual = 0.0;
  double primal = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cost.row(i, crow.data());
    double dual_row = 0.0;
    double primal_row = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double pair = pot.f(i) + pot.g(j);
      const double c = crow[static_cast<std::size_t>(j)];
      const double log_p = (pair - c) * inv_eps;
      const double p = std::exp(log_p);
      dual_row += b(j) * pair;
      // c + epsilon * log p, weighted by the plan
      primal_row += b(j) * p * (c + pot.epsilon * log_p);
    }
    dual += a(i) * dual_row;
    primal += a(i) * primal_row;
  }
  if (std::abs(primal - dual) > 1e-6 * std::max(1.0, std::abs(dual))) {
    throw ConvergenceError("primal and dual EOT values disagree", pot.marginal_residual, pot.iterations);
  }
  return dual;
}

Matrix barycentric_map(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y) {
  check_potentials(pot, X, Y);
  const detail::CostRows cost(X.points(), Y.points(), 0);
  const Eigen::Index n = X.size();
  const Eigen::Index m = Y.size();
  const auto mu = static_cast<std::size_t>(m);
  const Vector& b = Y.weights();
  const double inv_eps = 1.0 / pot.epsilon;
  Matrix out(n, Y.dim());
  std::vector<double> crow(mu), w(mu), scratch;
  for (Eigen::Index i = 0; i < n; ++i) {
    cost.row(i, crow.data());
    for (std::size_t j = 0; j < mu; ++j) {
      w[j] = ((pot.f(i) + pot.g(static_cast<Eigen::Index>(j))) - crow[j]) * inv_eps;
    }
    detail::exp_inplace(w.data(), mu);
    for (std::size_t j = 0; j < mu; ++j) w[j] *= b(static_cast<Eigen::Index>(j));
    double total = detail::sum(w.data(), mu);
    if (!(total > kMassLo && total < kMassHi)) {
      for (std::size_t j = 0; j < mu; ++j) {
        w[j] = (pot.g(static_cast<Eigen::Index>(j)) - crow[j]) * inv_eps + std::log(b(static_cast<Eigen::Index>(j)));
      }
      const double top = *std::max_element(w.begin(), w.end());
      for (auto& v : w) v -= top;
      detail::exp_inplace(w.data(), mu);
      total = detail::sum(w.data(), mu);
    }
    const Eigen::Map<const Eigen::RowVectorXd> weights(w.data(), m);
    out.row(i) = (weights * Y.points()) / total;
  }
  return out;
}

void write_potentials_csv(std::ostream& out, const DualPotentials& pot) {
  out << "side,index,value\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < pot.f.size(); ++i) out << "f," << i << ',' << pot.f(i) << '\n';
  for (Eigen::Index j = 0; j < pot.g.size(); ++j) out << "g," << j << ',' << pot.g(j) << '\n';
}

void write_residual_trace_csv(std::ostream& out, const DualPotentials& pot) {
  out << "iteration,residual\n" << std::setprecision(17);
  for (std::size_t t = 0; t < pot.residual_trace.size(); ++t) out << t << ',' << pot.residual_trace[t] << '\n';
}

}  // namespace entmap
