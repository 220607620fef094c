#include "entmap/error.hpp"
#include "entmap/estimators.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace entmap;

namespace {

PointCloud cloud(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 1.0) {
  return PointCloud(oracle::normal_matrix(n, d, seed, scale));
}

SpdMatrix spd(Eigen::Index d, std::uint64_t seed) {
  const Matrix a = oracle::normal_matrix(d, d, seed);
  return SpdMatrix(Eigen::MatrixXd(a * a.transpose() / static_cast<double>(d)) +
                   0.3 * Eigen::MatrixXd::Identity(d, d));
}

Eigen::MatrixXd msqrt(const Eigen::MatrixXd& m) { return spd_sqrt(SpdMatrix(m)).matrix(); }

}  // namespace

TEST(ExtendedMap, AgreesWithBarycentricOnSamples) {
  const PointCloud X = cloud(20, 3, 1), Y = cloud(20, 3, 2);
  const DualPotentials pot = solve(X, Y, 0.3);
  const Matrix B = barycentric_map(pot, X, Y);
  const Matrix E = extended_map(X.points(), pot, Y, 0.3);
  EXPECT_LE((B - E).cwiseAbs().maxCoeff(), 1e-10);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const Vector e = extended_map(Vector(X.point(i).transpose()), pot, Y, 0.3);
    EXPECT_LE((e - B.row(i).transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ExtendedMap, HugeEpsilonCollapsesToMean) {
  const PointCloud X = cloud(10, 2, 3), Y = cloud(10, 2, 4);
  const DualPotentials pot = solve(X, Y, 1e8);
  Vector x(2);
  x << 5.0, -3.0;
  EXPECT_LE((extended_map(x, pot, Y, 1e8) - Y.mean()).norm(), 1e-6);
}

TEST(ExtendedMap, FarQueryDoesNotOverflow) {
  const PointCloud X = cloud(10, 2, 5), Y = cloud(10, 2, 6);
  const DualPotentials pot = solve(X, Y, 0.1);
  Vector x(2);
  x << 1e3, -1e3;
  const Vector v = extended_map(x, pot, Y, 0.1);
  EXPECT_TRUE(v.allFinite());
}

TEST(InSample, SinglePointReturnsTarget) {
  Matrix y(1, 2);
  y << 0.25, -4.0;
  Vector x(2);
  x << 10.0, 10.0;
  for (const double eps : {0.01, 1.0, 1e4}) {
    const Vector v = in_sample_map(x, cloud(1, 2, 7), PointCloud(y), eps);
    EXPECT_LE((v - y.row(0).transpose()).norm(), 1e-12);
  }
}

TEST(InSample, IdentityReplacementMatchesBarycentric) {
  const PointCloud X = cloud(16, 2, 8), Y = cloud(16, 2, 9);
  const DualPotentials pot = solve(X, Y, 0.5);
  const Vector v = in_sample_map(Vector(X.point(0).transpose()), X, Y, 0.5);
  EXPECT_LE((v - barycentric_map(pot, X, Y).row(0).transpose()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(InSample, MatchesFromScratchOracle) {
  const Matrix x = oracle::normal_matrix(12, 2, 10), y = oracle::normal_matrix(12, 2, 11);
  const Vector q = oracle::normal_matrix(1, 2, 12).row(0).transpose();
  const Vector ref = oracle::reference_in_sample(q, x, y, 0.4, 20000);
  EXPECT_LE((in_sample_map(q, PointCloud(x), PointCloud(y), 0.4) - ref).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(InSample, HugeEpsilonGivesMean) {
  const PointCloud X = cloud(8, 3, 13), Y = cloud(8, 3, 14);
  Vector x(3);
  x << 1.0, 2.0, 3.0;
  EXPECT_LE((in_sample_map(x, X, Y, 1e8) - Y.mean()).norm(), 1e-6);
}

TEST(InSample, SizeMismatchRejected) {
  EXPECT_THROW(in_sample_map(Vector::Zero(2), cloud(4, 2, 1), cloud(5, 2, 2), 1.0), InputError);
}

TEST(InSampleMapEngine, AgreesWithDirectEstimator) {
  for (const double eps : {0.05, 0.3, 1.0, 10.0}) {
    const PointCloud X = cloud(40, 2, 15), Y = cloud(40, 2, 16);
    const Matrix Q = oracle::normal_matrix(30, 2, 17);
    const InSampleMap engine(X, Y, eps);
    const Matrix fast = engine.evaluate(Q);
    for (Eigen::Index i = 0; i < Q.rows(); ++i) {
      const Vector direct = in_sample_map(Vector(Q.row(i).transpose()), X, Y, eps);
      EXPECT_LE((fast.row(i).transpose() - direct).cwiseAbs().maxCoeff(), 1e-7) << "eps " << eps << " row " << i;
    }
  }
}

TEST(InSampleMapEngine, FarQueriesUseFallbackAndStayCorrect) {
  const PointCloud X = cloud(24, 2, 18), Y = cloud(24, 2, 19);
  Matrix Q(3, 2);
  Q << 8.0, 8.0, -6.0, 0.5, 0.0, 0.0;
  const double eps = 0.2;
  const Matrix fast = InSampleMap(X, Y, eps).evaluate(Q);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const Vector direct = in_sample_map(Vector(Q.row(i).transpose()), X, Y, eps);
    EXPECT_LE((fast.row(i).transpose() - direct).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(InSampleMapEngine, OneDimensionalSeriesPathMatchesDense) {
  for (const double eps : {0.2, 1.0, 4.0}) {
    const PointCloud X = cloud(300, 1, 60), Y = cloud(300, 1, 61, 1.5);
    Matrix Q = oracle::normal_matrix(40, 1, 62, 2.0);
    Q(0, 0) = 9.0;
    SolverOptions dense;
    dense.fast_1d = false;
    const Matrix fast = InSampleMap(X, Y, eps).evaluate(Q);
    const Matrix slow = InSampleMap(X, Y, eps, dense).evaluate(Q);
    EXPECT_LE((fast - slow).cwiseAbs().maxCoeff(), 1e-9) << eps;
    for (const Eigen::Index i : {0, 7, 39}) {
      const Vector direct = in_sample_map(Vector(Q.row(i).transpose()), X, Y, eps, dense);
      EXPECT_LE((fast.row(i).transpose() - direct).cwiseAbs().maxCoeff(), 1e-7) << eps;
    }
  }
}

TEST(InSampleMapEngine, UncachedKernelMatchesCached) {
  const PointCloud X = cloud(64, 3, 20), Y = cloud(64, 3, 21);
  const Matrix Q = oracle::normal_matrix(20, 3, 22);
  SolverOptions uncached;
  uncached.cost_cache_entries = 0;
  const Matrix a = InSampleMap(X, Y, 0.5).evaluate(Q);
  const Matrix b = InSampleMap(X, Y, 0.5, uncached).evaluate(Q);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(InSampleMapEngine, ManyQueriesAcrossBlocks) {
  const PointCloud X = cloud(32, 2, 23), Y = cloud(32, 2, 24);
  const Matrix Q = oracle::normal_matrix(300, 2, 25);
  const InSampleMap engine(X, Y, 0.5);
  const Matrix all = engine.evaluate(Q);
  for (const Eigen::Index i : {0, 127, 128, 255, 299}) {
    EXPECT_LE((all.row(i).transpose() - engine.evaluate(Vector(Q.row(i).transpose()))).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Estimators, OutputsInsideConvexHull) {
  const PointCloud X = cloud(30, 2, 26), Y = cloud(30, 2, 27, 2.0);
  const Matrix Q = oracle::normal_matrix(50, 2, 28, 2.0);
  EstimatorConfig cfg;
  cfg.epsilon = 0.5;
  cfg.k = 3;
  const Matrix outs[] = {InSampleMap(X, Y, 0.5).evaluate(Q), BatchedMap(X, Y, cfg).evaluate(Q),
                         extended_map(Q, solve(X, Y, 0.5), Y, 0.5)};
  std::mt19937_64 rng(29);
  std::normal_distribution<double> z;
  for (int t = 0; t < 300; ++t) {
    Vector u(2);
    u << z(rng), z(rng);
    const double support = (Y.points() * u).maxCoeff();
    for (const auto& out : outs) EXPECT_LE((out * u).maxCoeff(), support + 1e-9);
  }
}

TEST(Batched, ConfigDivisibility) {
  EstimatorConfig cfg;
  cfg.k = 3;
  EXPECT_THROW(cfg.batch_size(100), InputError);
  EXPECT_EQ(cfg.batch_size(99), 33u);
  cfg.m = 20;
  EXPECT_THROW(cfg.batch_size(99), InputError);
  EXPECT_EQ(cfg.batch_size(60), 20u);
  cfg.k = 0;
  EXPECT_THROW(cfg.batch_size(60), InputError);
  EstimatorConfig c2;
  c2.k = 3;
  EXPECT_THROW(BatchedMap(cloud(100, 2, 1), cloud(100, 2, 2), c2), InputError);
  EXPECT_THROW(batched_map(Vector::Zero(2), cloud(100, 2, 1), cloud(100, 2, 2), c2), InputError);
}

TEST(Batched, SingleBatchEqualsInSample) {
  const PointCloud X = cloud(20, 2, 30), Y = cloud(20, 2, 31);
  Vector x(2);
  x << 0.3, -0.2;
  EstimatorConfig cfg;
  cfg.epsilon = 0.5;
  EXPECT_EQ(batched_map(x, X, Y, cfg), in_sample_map(x, X, Y, 0.5));
}

TEST(Batched, UnitBatchesGiveMeanOfTargets) {
  const PointCloud X = cloud(6, 2, 32), Y = cloud(6, 2, 33);
  EstimatorConfig cfg;
  cfg.epsilon = 0.2;
  cfg.k = 6;
  Vector x(2);
  x << 2.0, 1.0;
  EXPECT_LE((batched_map(x, X, Y, cfg) - Y.mean()).norm(), 1e-12);
  const Matrix Q = oracle::normal_matrix(5, 2, 34);
  const Matrix B = BatchedMap(X, Y, cfg).evaluate(Q);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_LE((B.row(i).transpose() - Y.mean()).norm(), 1e-12);
}

TEST(Batched, TwoBatchesEqualHandComposition) {
  const Matrix x = oracle::normal_matrix(4, 2, 35), y = oracle::normal_matrix(4, 2, 36);
  Vector q(2);
  q << -0.4, 0.9;
  EstimatorConfig cfg;
  cfg.epsilon = 0.7;
  cfg.k = 2;
  const Vector a = in_sample_map(q, PointCloud(Matrix(x.topRows(2))), PointCloud(Matrix(y.topRows(2))), 0.7);
  const Vector b = in_sample_map(q, PointCloud(Matrix(x.bottomRows(2))), PointCloud(Matrix(y.bottomRows(2))), 0.7);
  const Vector hand = 0.5 * (a + b);
  EXPECT_LE((batched_map(q, PointCloud(x), PointCloud(y), cfg) - hand).cwiseAbs().maxCoeff(), 1e-12);
  const BatchedMap bm(PointCloud(x), PointCloud(y), cfg);
  EXPECT_EQ(bm.batches(), 2u);
  EXPECT_LE((bm.evaluate(q) - hand).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Batched, ClassEqualsMeanOfBatches) {
  const PointCloud X = cloud(60, 2, 37), Y = cloud(60, 2, 38);
  EstimatorConfig cfg;
  cfg.epsilon = 0.4;
  cfg.k = 4;
  const BatchedMap bm(X, Y, cfg);
  const Matrix Q = oracle::normal_matrix(10, 2, 39);
  Matrix sum = Matrix::Zero(10, 2);
  for (std::size_t b = 0; b < bm.batches(); ++b) sum += bm.batch(b).evaluate(Q);
  EXPECT_LE((bm.evaluate(Q) - sum / 4.0).cwiseAbs().maxCoeff(), 1e-15);
  for (Eigen::Index i = 0; i < 10; ++i) {
    const Vector direct = batched_map(Vector(Q.row(i).transpose()), X, Y, cfg);
    EXPECT_LE((bm.evaluate(Vector(Q.row(i).transpose())) - direct).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(GaussianMap, OneDimensionalStandardCase) {
  for (const double eps : {0.1, 1.0, 4.0}) {
    const GaussianEntropicMap T(Vector::Zero(1), SpdMatrix::identity(1), Vector::Zero(1), SpdMatrix::identity(1), eps);
    EXPECT_NEAR(T.linear()(0, 0), std::sqrt(1.0 + eps * eps / 4.0) - eps / 2.0, 1e-14);
  }
}

TEST(GaussianMap, MatchesPrintedCovarianceFormula) {
  const Eigen::Index d = 4;
  const SpdMatrix S0 = spd(d, 40), S1 = spd(d, 41);
  const Vector x0 = oracle::normal_matrix(1, d, 42).row(0).transpose();
  const Vector x1 = oracle::normal_matrix(1, d, 43).row(0).transpose();
  for (const double eps : {0.05, 0.5, 2.0}) {
    const Eigen::MatrixXd R0 = msqrt(S0.matrix());
    const Eigen::MatrixXd R0i = R0.inverse();
    const Eigen::MatrixXd inner = R0 * S1.matrix() * R0 + 0.25 * eps * eps * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd C = R0 * msqrt(inner) * R0i - 0.5 * eps * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd A = C.transpose() * S0.matrix().inverse();
    const GaussianEntropicMap T(x0, S0, x1, S1, eps);
    EXPECT_LE((T.linear() - A).cwiseAbs().maxCoeff(), 1e-9);
    const Vector x = oracle::normal_matrix(1, d, 44).row(0).transpose();
    EXPECT_LE((T(x) - (x1 + A * (x - x0))).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((gaussian_entropic_map(x0, S0, x1, S1, eps, x) - T(x)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(GaussianMap, UnregularisedLimitIsMongeMap) {
  const Eigen::Index d = 3;
  const SpdMatrix S0 = spd(d, 45), S1 = spd(d, 46);
  const Vector x0 = Vector::Zero(d), x1 = Vector::Ones(d);
  const Eigen::MatrixXd R0 = msqrt(S0.matrix()), R0i = R0.inverse();
  const Eigen::MatrixXd A = R0i * msqrt(R0 * S1.matrix() * R0) * R0i;
  const GaussianEntropicMap T(x0, S0, x1, S1, 1e-8);
  EXPECT_LE((T.linear() - A).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(GaussianMap, HugeEpsilonCollapsesToTargetMean) {
  const SpdMatrix S0 = spd(3, 47), S1 = spd(3, 48);
  Vector x1(3);
  x1 << 1.0, 2.0, 3.0;
  const GaussianEntropicMap T(Vector::Zero(3), S0, x1, S1, 1e8);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Vector x = oracle::normal_matrix(1, 3, 50 + s, 10.0).row(0).transpose();
    EXPECT_LE((T(x) - x1).norm(), 1e-6 * x.norm());
  }
}

TEST(GaussianMap, AffineCombination) {
  const SpdMatrix S0 = spd(5, 49), S1 = spd(5, 51);
  const GaussianEntropicMap T(Vector::Ones(5), S0, -Vector::Ones(5), S1, 0.7);
  const Vector x = oracle::normal_matrix(1, 5, 52).row(0).transpose();
  const Vector y = oracle::normal_matrix(1, 5, 53).row(0).transpose();
  for (const double a : {-1.5, 0.0, 0.3, 1.0, 2.0}) {
    EXPECT_LE((T(a * x + (1 - a) * y) - (a * T(x) + (1 - a) * T(y))).cwiseAbs().maxCoeff(), 1e-10);
  }
  const Matrix P = oracle::normal_matrix(4, 5, 54);
  const Matrix TP = T.apply(P);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_LE((TP.row(i).transpose() - T(Vector(P.row(i).transpose()))).norm(), 1e-14);
}

TEST(GaussianMap, SlopeShrinksWithEpsilon) {
  double prev = std::numeric_limits<double>::infinity();
  for (const double eps : {1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0}) {
    const double c =
        GaussianEntropicMap(Vector::Zero(1), SpdMatrix::identity(1), Vector::Zero(1), SpdMatrix::identity(1), eps)
            .linear()(0, 0);
    EXPECT_LT(c, prev);
    prev = c;
  }
}

TEST(GaussianMap, DimensionMismatchRejected) {
  EXPECT_THROW(GaussianEntropicMap(Vector::Zero(2), SpdMatrix::identity(3), Vector::Zero(3), SpdMatrix::identity(3), 1.0),
               InputError);
  EXPECT_THROW(GaussianEntropicMap(Vector::Zero(3), SpdMatrix::identity(3), Vector::Zero(3), SpdMatrix::identity(3), 0.0),
               InputError);
}

TEST(Estimators, HeldOutQueryNearLargeSampleOracle) {
  // 1-D standard Gaussians; the large-n estimator stands in for the truth.
  const double eps = 1.0;
  const PointCloud X = cloud(200, 1, 55), Y = cloud(200, 1, 56);
  const PointCloud XL = cloud(2000, 1, 57), YL = cloud(2000, 1, 58);
  const InSampleMap large(XL, YL, eps);
  const DualPotentials pot = solve(X, Y, eps);
  const InSampleMap small(X, Y, eps);
  Matrix Q(3, 1);
  Q << -0.8, 0.1, 0.9;
  const Matrix ref = large.evaluate(Q);
  const Matrix ext = extended_map(Q, pot, Y, eps);
  const Matrix ins = small.evaluate(Q);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_LE(std::abs(ext(i, 0) - ref(i, 0)), 0.15);
    EXPECT_LE(std::abs(ins(i, 0) - ref(i, 0)), 0.15);
    EXPECT_LE(std::abs(ins(i, 0) - ext(i, 0)), 0.02);
  }
}
