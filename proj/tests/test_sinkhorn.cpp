#include "entmap/error.hpp"
#include "entmap/sinkhorn.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace entmap;

namespace {

PointCloud cloud(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 1.0) {
  return PointCloud(oracle::normal_matrix(n, d, seed, scale));
}

Vector softmin_f(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y) {
  const Matrix C = half_sq_cost_matrix(X, Y);
  Vector f(X.size());
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < Y.size(); ++j) s += Y.weights()(j) * std::exp((pot.g(j) - C(i, j)) / pot.epsilon);
    f(i) = -pot.epsilon * std::log(s);
  }
  return f;
}

Vector softmin_g(const DualPotentials& pot, const PointCloud& X, const PointCloud& Y) {
  const Matrix C = half_sq_cost_matrix(X, Y);
  Vector g(Y.size());
  for (Eigen::Index j = 0; j < Y.size(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < X.size(); ++i) s += X.weights()(i) * std::exp((pot.f(i) - C(i, j)) / pot.epsilon);
    g(j) = -pot.epsilon * std::log(s);
  }
  return g;
}

double on_grid(double v) { return std::ldexp(std::round(std::ldexp(v, 32)), -32); }

}  // namespace

TEST(Solve, SinglePair) {
  Matrix x(1, 2), y(1, 2);
  x << 1.0, -1.0;
  y << 0.5, 2.0;
  const PointCloud X(x), Y(y);
  for (const double eps : {0.01, 1.0, 100.0}) {
    const DualPotentials pot = solve(X, Y, eps);
    EXPECT_NEAR(plan_density(pot, X, Y).p(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(pot.f(0) + pot.g(0), 0.5 * (0.25 + 9.0), 1e-10);
    EXPECT_EQ(pot.f(0), 0.0);
    EXPECT_NEAR(eot_cost(pot, X, Y), 4.625, 1e-10);
  }
}

TEST(Solve, IdenticalSinglePointCostZero) {
  const PointCloud X(Matrix::Constant(1, 3, 0.7));
  EXPECT_NEAR(eot_cost(solve(X, X, 1.0), X, X), 0.0, 1e-14);
}

TEST(Solve, HugeEpsilonGivesProductPlan) {
  const PointCloud X = cloud(12, 3, 1), Y = cloud(9, 3, 2);
  const DualPotentials pot = solve(X, Y, 1e8);
  EXPECT_LE((plan_density(pot, X, Y).p.array() - 1.0).abs().maxCoeff(), 1e-6);
  const Matrix T = barycentric_map(pot, X, Y);
  const Vector ybar = Y.mean();
  for (Eigen::Index i = 0; i < T.rows(); ++i) EXPECT_LE((T.row(i).transpose() - ybar).norm(), 1e-6);
}

TEST(Solve, TwoByTwoMatchesGridOracle) {
  for (const double eps : {0.1, 1.0, 10.0}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const PointCloud X = cloud(2, 2, 100 + seed), Y = cloud(2, 2, 200 + seed);
      const DualPotentials pot = solve(X, Y, eps);
      EXPECT_LE(pot.marginal_residual, 1e-9);
      const auto grid = oracle::grid_eot_2x2(half_sq_cost_matrix(X, Y), eps);
      EXPECT_NEAR(eot_cost(pot, X, Y), grid.cost, 1e-5);
      const Matrix T = barycentric_map(pot, X, Y);
      EXPECT_LE((T - oracle::grid_barycentric_2x2(grid, Y.points())).cwiseAbs().maxCoeff(), 1e-5);
    }
  }
}

TEST(Solve, MarginalsOfRandomEightByEight) {
  const PointCloud X = cloud(8, 2, 3), Y = cloud(8, 2, 4);
  const DualPotentials pot = solve(X, Y, 0.5);
  const Matrix p = plan_density(pot, X, Y).p;
  EXPECT_GE(p.minCoeff(), 0.0);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_NEAR(p.row(i).mean(), 1.0, 1e-7);
  for (Eigen::Index j = 0; j < 8; ++j) EXPECT_NEAR(p.col(j).mean(), 1.0, 1e-7);
}

TEST(Solve, WeightedMarginals) {
  const Matrix x = oracle::normal_matrix(5, 2, 5), y = oracle::normal_matrix(7, 2, 6);
  Vector a(5), b(7);
  a << 0.1, 0.3, 0.2, 0.25, 0.15;
  b << 0.05, 0.1, 0.2, 0.15, 0.2, 0.1, 0.2;
  const PointCloud X(x, a), Y(y, b);
  const DualPotentials pot = solve(X, Y, 0.3);
  const Matrix p = plan_density(pot, X, Y).p;
  const Matrix pi = a.asDiagonal() * p * b.asDiagonal();
  EXPECT_LE((pi.rowwise().sum() - a).cwiseAbs().sum(), 1e-9);
  EXPECT_LE((pi.colwise().sum().transpose() - b).cwiseAbs().sum(), 1e-9);
  const Matrix ref = oracle::reference_plan(x, y, a, b, 0.3, 5000);
  EXPECT_LE((pi - ref).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(a.dot(pot.f), 0.0, 1e-12);
}

TEST(Solve, FixedPointRelations) {
  const PointCloud X = cloud(16, 3, 7), Y = cloud(16, 3, 8);
  const double eps = 0.4;
  const DualPotentials pot = solve(X, Y, eps);
  // An L1 violation of tol bounds each row's relative violation by n * tol.
  const double slack = eps * 16 * 1e-9;
  EXPECT_LE((softmin_f(pot, X, Y) - pot.f).cwiseAbs().maxCoeff(), slack);
  EXPECT_LE((softmin_g(pot, X, Y) - pot.g).cwiseAbs().maxCoeff(), slack);
}

TEST(Solve, SmallEpsilonStaysFinite) {
  const PointCloud X = cloud(128, 2, 9), Y = cloud(128, 2, 10);
  const DualPotentials pot = solve(X, Y, 0.05);
  EXPECT_TRUE(pot.f.allFinite());
  EXPECT_TRUE(pot.g.allFinite());
  EXPECT_LE(pot.marginal_residual, 1e-9);
}

TEST(Solve, DuplicatePointsAreDistinctAtoms) {
  Matrix x(3, 1), y(2, 1);
  x << 0.0, 0.0, 1.0;
  y << 0.0, 1.0;
  const PointCloud X(x), Y(y);
  const DualPotentials pot = solve(X, Y, 0.2);
  EXPECT_EQ(pot.f(0), pot.f(1));
  const Matrix pi = plan_density(pot, X, Y).p / 6.0;
  EXPECT_NEAR(pi.sum(), 1.0, 1e-9);
}

TEST(Solve, DeterministicAndWarmStart) {
  const PointCloud X = cloud(40, 2, 11), Y = cloud(30, 2, 12);
  const DualPotentials a = solve(X, Y, 0.2);
  const DualPotentials b = solve(X, Y, 0.2);
  EXPECT_EQ(a.f, b.f);
  EXPECT_EQ(a.g, b.g);
  EXPECT_EQ(a.iterations, b.iterations);
  const DualPotentials w = solve(X, Y, 0.2, a.f, a.g);
  EXPECT_LE(w.iterations, 2u);
  EXPECT_LE((w.f - a.f).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Solve, PlainIterationAgreesWithOverRelaxed) {
  const PointCloud X = cloud(50, 2, 13), Y = cloud(50, 2, 14);
  SolverOptions plain;
  plain.over_relaxation = false;
  const DualPotentials a = solve(X, Y, 0.1, plain);
  const DualPotentials b = solve(X, Y, 0.1);
  EXPECT_LE(b.iterations, a.iterations);
  EXPECT_LE((plan_density(a, X, Y).p - plan_density(b, X, Y).p).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Solve, Errors) {
  const PointCloud X = cloud(4, 2, 15), Y = cloud(4, 2, 16);
  EXPECT_THROW(solve(X, Y, 0.0), InputError);
  EXPECT_THROW(solve(X, Y, -1.0), InputError);
  SolverOptions bad_tol;
  bad_tol.tol = 0.0;
  EXPECT_THROW(solve(X, Y, 1.0, bad_tol), InputError);
  EXPECT_THROW(solve(X, cloud(4, 3, 17), 1.0), InputError);
  Vector w(4);
  w << 0.5, 0.5, 0.0, 0.0;
  EXPECT_THROW(solve(PointCloud(X.points(), w), Y, 1.0), InputError);

  SolverOptions capped;
  capped.max_iter = 2;
  capped.over_relaxation = false;
  try {
    solve(cloud(64, 2, 18), cloud(64, 2, 19), 0.05, capped);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.best_residual(), 1e-9);
    EXPECT_TRUE(std::isfinite(e.best_residual()));
    EXPECT_EQ(e.iterations(), 2u);
  }
}

TEST(EotCost, RefusesUnconvergedPotentials) {
  const PointCloud X = cloud(4, 2, 20), Y = cloud(4, 2, 21);
  DualPotentials pot = solve(X, Y, 1.0);
  pot.marginal_residual = 1.0;
  EXPECT_THROW(eot_cost(pot, X, Y), ConvergenceError);
  DualPotentials off = solve(X, Y, 1.0);
  off.f.array() += 0.5;
  EXPECT_THROW(eot_cost(off, X, Y), ConvergenceError);
}

TEST(EotCost, NondecreasingInEpsilon) {
  const PointCloud X = cloud(20, 2, 22), Y = cloud(20, 2, 23);
  double prev = -std::numeric_limits<double>::infinity();
  for (const double eps : {0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
    const double s = eot_cost(solve(X, Y, eps), X, Y);
    EXPECT_GE(s, prev - 1e-9) << "eps = " << eps;
    prev = s;
  }
}

TEST(Barycentric, SingleTargetPoint) {
  const PointCloud X = cloud(6, 2, 24);
  Matrix y(1, 2);
  y << 3.0, -1.0;
  const PointCloud Y(y);
  const Matrix T = barycentric_map(solve(X, Y, 0.3), X, Y);
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_LE((T.row(i) - y.row(0)).norm(), 1e-12);
}

TEST(Barycentric, InsideConvexHull) {
  const PointCloud X = cloud(40, 2, 25), Y = cloud(25, 2, 26, 2.0);
  const Matrix T = barycentric_map(solve(X, Y, 0.05), X, Y);
  std::mt19937_64 rng(27);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 500; ++trial) {
    Vector u(2);
    u << z(rng), z(rng);
    const double support = (Y.points() * u).maxCoeff();
    EXPECT_LE((T * u).maxCoeff(), support + 1e-12);
  }
}

TEST(Properties, DoublyStochasticContraction) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PointCloud X = cloud(30, 3, 300 + seed), Y = cloud(30, 3, 400 + seed);
    const Matrix nP = plan_density(solve(X, Y, 0.3), X, Y).p / 30.0;
    const Matrix Yc = Y.points().rowwise() - Y.points().colwise().mean();
    EXPECT_LE((nP * Yc).norm(), Yc.norm() * (1.0 + 1e-9));
  }
}

TEST(Properties, GaugeInvarianceBitForBit) {
  const PointCloud X = cloud(8, 2, 28), Y = cloud(8, 2, 29);
  DualPotentials pot = solve(X, Y, 0.7);
  // Snap the potentials to a coarse binary grid so the shift is exact.
  for (Eigen::Index i = 0; i < 8; ++i) pot.f(i) = on_grid(pot.f(i));
  for (Eigen::Index j = 0; j < 8; ++j) pot.g(j) = on_grid(pot.g(j));
  pot = gauge_fixed(pot, X.weights());
  for (const double c : {3.0, -0.5, 1024.0}) {
    DualPotentials shifted = pot;
    shifted.f.array() += c;
    shifted.g.array() -= c;
    shifted = gauge_fixed(shifted, X.weights());
    EXPECT_EQ(shifted.f, pot.f);
    EXPECT_EQ(shifted.g, pot.g);
    EXPECT_EQ(plan_density(shifted, X, Y).p, plan_density(pot, X, Y).p);
    EXPECT_EQ(barycentric_map(shifted, X, Y), barycentric_map(pot, X, Y));
    EXPECT_EQ(eot_cost(shifted, X, Y), eot_cost(pot, X, Y));
    // Without the gauge fix the plan is unchanged too, since f + g is formed first.
    DualPotentials raw = pot;
    raw.f.array() += c;
    raw.g.array() -= c;
    EXPECT_EQ(plan_density(raw, X, Y).p, plan_density(pot, X, Y).p);
  }
}

TEST(Dumps, PotentialsAndTrace) {
  const PointCloud X = cloud(5, 2, 30), Y = cloud(4, 2, 31);
  SolverOptions opt;
  opt.record_trace = true;
  const DualPotentials pot = solve(X, Y, 0.5, opt);
  ASSERT_FALSE(pot.residual_trace.empty());
  EXPECT_LE(pot.residual_trace.back(), 1e-9);
  std::stringstream p, t;
  write_potentials_csv(p, pot);
  write_residual_trace_csv(t, pot);
  std::string line;
  std::getline(p, line);
  EXPECT_EQ(line, "side,index,value");
  int rows = 0;
  while (std::getline(p, line)) ++rows;
  EXPECT_EQ(rows, 9);
  std::getline(t, line);
  EXPECT_EQ(line, "iteration,residual");
  rows = 0;
  while (std::getline(t, line)) ++rows;
  EXPECT_EQ(static_cast<std::size_t>(rows), pot.residual_trace.size());
}

TEST(Solve, OneDimensionalSeriesPathMatchesDense) {
  // Wide and offset clouds, non-uniform weights, and a small epsilon that
  // forces many bins.
  struct Case {
    Eigen::Index n, m;
    double scale, offset, eps;
  };
  for (const Case& cs : {Case{400, 300, 1.0, 0.0, 1.0}, Case{500, 500, 2.0, 3.0, 0.3}, Case{256, 384, 1.0, -1.0, 0.1}}) {
    Matrix y = oracle::normal_matrix(cs.m, 1, 41, cs.scale);
    y.array() += cs.offset;
    Vector w = (oracle::normal_matrix(cs.n, 1, 42).array().abs() + 0.1).matrix();
    w /= w.sum();
    const PointCloud X(oracle::normal_matrix(cs.n, 1, 40), w), Y(y);
    SolverOptions dense;
    dense.fast_1d = false;
    const DualPotentials fast = solve(X, Y, cs.eps);
    const DualPotentials slow = solve(X, Y, cs.eps, dense);
    EXPECT_LE(fast.marginal_residual, 1e-9);
    EXPECT_LE((fast.f - slow.f).cwiseAbs().maxCoeff(), 1e-9 * cs.eps) << cs.eps;
    EXPECT_LE((fast.g - slow.g).cwiseAbs().maxCoeff(), 1e-9 * cs.eps) << cs.eps;
    EXPECT_LE((softmin_f(fast, X, Y) - fast.f).cwiseAbs().maxCoeff(), 1e-8 * cs.eps);
  }
}
