#ifndef ENTMAP_SINKHORN_HPP_
#define ENTMAP_SINKHORN_HPP_

#include "entmap/core.hpp"

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace entmap {

struct SolverOptions {
  /// Stop once the L1 violation of both marginals is at most `tol`.
  double tol = 1e-9;
  std::size_t max_iter = 100000;
  /// Switch to over-relaxed updates once the plain iteration has settled
  /// into its linear rate. The fixed point is unchanged.
  bool over_relaxation = true;
  /// Keep one residual per iteration in DualPotentials::residual_trace.
  bool record_trace = false;
  /// Cost matrices with at most this many entries are cached in memory.
  std::size_t cost_cache_entries = std::size_t{1} << 24;
  /// In one dimension, evaluate the kernel sums by a clustered series
  /// expansion (relative error below 1e-16) when that is cheaper than the
  /// dense sums.
  bool fast_1d = true;
};

/// Dual potentials of the discrete entropic problem with cost 0.5||x - y||^2.
///
/// In the gauge returned by `solve` the X-weighted mean of f is zero.
struct DualPotentials {
  Vector f;
  Vector g;
  double epsilon = 0.0;
  std::size_t iterations = 0;
  /// L1 marginal violation of the induced plan.
  double marginal_residual = std::numeric_limits<double>::infinity();
  /// Tolerance that was requested when the potentials were computed.
  double tolerance = 0.0;
  /// Observed linear contraction factor of the plain iteration, NaN if the
  /// solve ended before it could be estimated.
  double contraction = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> residual_trace;

  bool converged() const { return marginal_residual <= tolerance; }
};

/// Relative density of the optimal plan with respect to the product of the
/// cloud weights: p(i, j) = exp((f_i + g_j - c_ij) / epsilon).
struct PlanDensity {
  Matrix p;
};

/// Log-domain Sinkhorn on two weighted clouds.
///
/// Throws InputError for epsilon <= 0, tol <= 0 or a dimension mismatch, and
/// ConvergenceError (carrying the best residual seen) if `max_iter` sweeps do
/// not reach `tol`. Deterministic for fixed inputs.
DualPotentials solve(const PointCloud& X, const PointCloud& Y, double epsilon,
                     const SolverOptions& options = {});

/// Same as `solve`, starting from the given potentials.
DualPotentials solve(const PointCloud& X, const PointCloud& Y, double epsilon,
                     const Vector& f_init, const Vector& g_init, const SolverOptions& options = {});

/// Shift (f, g) -> (f - s, g + s) so the X-weighted mean of f is zero.
DualPotentials gauge_fixed(DualPotentials pot, const Vector& x_weights);

PlanDensity plan_density(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y);

/// Dual value mu(f) + nu(g). Cross-checked against the primal value
/// pi(c) + epsilon KL(pi | mu x nu); throws ConvergenceError when the
/// potentials did not converge or the two values disagree beyond 1e-6
/// relative.
double eot_cost(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y);

/// Row i is the plan-weighted average of Y conditional on X_i. Weights are
/// renormalised per row so each output lies in the convex hull of Y.
Matrix barycentric_map(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y);

/// Debug dumps: `index,f` / `index,g` rows, and `iteration,residual` rows.
void write_potentials_csv(std::ostream& out, const DualPotentials& pot);
void write_residual_trace_csv(std::ostream& out, const DualPotentials& pot);

}  // namespace entmap

#endif  // ENTMAP_SINKHORN_HPP_
