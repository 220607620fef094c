#include "entmap/measures.hpp"

#include "entmap/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace entmap {

namespace {

constexpr double kSimplexTol = 1e-12;

void check_simplex(const Vector& w, const char* what) {
  if (w.size() < 1) throw InputError(std::string(what) + " must be non-empty");
  if (!w.allFinite() || (w.array() < 0.0).any()) throw InputError(std::string(what) + " must be nonnegative");
  if (std::abs(w.sum() - 1.0) > kSimplexTol) throw InputError(std::string(what) + " must sum to 1");
}

void check_count(std::size_t n) {
  if (n == 0) throw InputError("sample size must be at least 1");
}

Vector standard_normal(Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector z(d);
  for (Eigen::Index k = 0; k < d; ++k) z(k) = normal(rng);
  return z;
}

// Inverse-CDF categorical draw; stable under weights with zeros.
class Categorical {
 public:
  explicit Categorical(const Vector& w) : cdf_(static_cast<std::size_t>(w.size())) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      acc += w(i);
      cdf_[static_cast<std::size_t>(i)] = acc;
    }
    for (auto& v : cdf_) v /= acc;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = static_cast<std::size_t>(it - cdf_.begin());
    return std::min(idx, cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

Matrix gaussian_factor(const GaussianSpec& g) { return spd_sqrt(g.covariance).matrix(); }

Vector dirichlet_ones(Eigen::Index k, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  Vector w(k);
  for (Eigen::Index i = 0; i < k; ++i) w(i) = expo(rng);
  w /= w.sum();
  return w;
}

GmmSpec random_gmm(Eigen::Index d, Eigen::Index components, const Vector& center, Rng& rng) {
  const double scale = 1.0 / static_cast<double>(d);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix means(components, d);
  for (Eigen::Index i = 0; i < components; ++i) {
    means.row(i) = (center + std::sqrt(scale) * standard_normal(d, rng)).transpose();
  }
  const Vector weights = dirichlet_ones(components, rng);
  std::vector<GaussianSpec> parts;
  for (Eigen::Index i = 0; i < components; ++i) {
    // w ~ U[0, 1] can be arbitrarily close to 0; keep the matrix SPD.
    const double w = std::max(unif(rng), 1e-12);
    parts.emplace_back(means.row(i).transpose(), SpdMatrix(Eigen::MatrixXd::Identity(d, d) * (w * scale)));
  }
  return GmmSpec(weights, std::move(parts));
}

LogConcaveSpec random_logconcave(Eigen::Index d, Eigen::Index pieces, double c, Rng& rng) {
  Matrix slopes(pieces, d);
  Vector intercepts(pieces);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < pieces; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) slopes(i, k) = normal(rng);
    intercepts(i) = normal(rng);
  }
  return LogConcaveSpec(c, std::move(slopes), std::move(intercepts));
}

GaussianSpec diag_gaussian(std::vector<double> mean, std::vector<double> diag) {
  const auto d = static_cast<Eigen::Index>(mean.size());
  return GaussianSpec(Eigen::Map<Vector>(mean.data(), d), SpdMatrix::diagonal(Eigen::Map<Vector>(diag.data(), d)));
}

MeasurePair fig1_pair() {
  return {diag_gaussian({0, 0, 0, 0, 0}, {1, 1, 1, 1, 1}), diag_gaussian({2, 1, 0, -1, -2}, {2, 0.5, 1, 0.1, 5})};
}

MeasurePair fig3_pair() {
  std::vector<GaussianSpec> mu_parts{
      diag_gaussian({0, 0, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5, 0.5}),
      diag_gaussian({1, -1, -1, -1, -1}, {0.2, 0.2, 0.2, 0.2, 0.2}),
      diag_gaussian({-1, -1, -1, -1, 1}, {0.5, 1.0, 1.5, 1.0, 0.5}),
      diag_gaussian({0, 0, 3, 0, 0}, {0.1, 0.1, 3.0, 0.1, 0.1}),
  };
  std::vector<GaussianSpec> nu_parts{
      diag_gaussian({1, 0, 0, 0, 0}, {1, 1, 1, 1, 1}),
      diag_gaussian({0, 1, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5, 0.5}),
      diag_gaussian({0, 0, 1, 0, 0}, {0.25, 0.25, 0.25, 0.25, 0.25}),
      diag_gaussian({0, 0, 0, 1, 0}, {0.125, 0.125, 0.125, 0.125, 0.125}),
  };
  Vector alpha(4), beta(4);
  alpha << 0.25, 0.25, 0.25, 0.25;
  beta << 0.1, 0.2, 0.3, 0.4;
  return {GmmSpec(alpha, std::move(mu_parts)), GmmSpec(beta, std::move(nu_parts))};
}

}  // namespace

GaussianSpec::GaussianSpec(Vector m, SpdMatrix cov) : mean(std::move(m)), covariance(std::move(cov)) {
  if (mean.size() != covariance.dim()) throw InputError("Gaussian mean and covariance dimensions differ");
  if (!mean.allFinite()) throw InputError("Gaussian mean must be finite");
}

GmmSpec::GmmSpec(Vector w, std::vector<GaussianSpec> comps) : weights(std::move(w)), components(std::move(comps)) {
  check_simplex(weights, "mixture weights");
  if (static_cast<Eigen::Index>(components.size()) != weights.size()) {
    throw InputError("mixture weight count does not match component count");
  }
  for (const auto& c : components) {
    if (c.dim() != components.front().dim()) throw InputError("mixture components have different dimensions");
  }
}

LogConcaveSpec::LogConcaveSpec(double c_, Matrix u, Vector b) : c(c_), slopes(std::move(u)), intercepts(std::move(b)) {
  if (!(c > 0.0) || !std::isfinite(c)) throw InputError("log-concave constant c must be positive");
  if (slopes.cols() < 1) throw InputError("log-concave spec needs d >= 1");
  if (slopes.rows() != intercepts.size()) throw InputError("slope and intercept counts differ");
  if (!slopes.allFinite() || !intercepts.allFinite()) throw InputError("log-concave pieces must be finite");
}

LogConcaveSpec::LogConcaveSpec(double c_, Eigen::Index d) : LogConcaveSpec(c_, Matrix(0, d), Vector(0)) {}

DiscreteMeasure::DiscreteMeasure(Matrix a, Vector w) : atoms(std::move(a)), weights(std::move(w)) {
  if (atoms.rows() < 1 || atoms.cols() < 1) throw InputError("discrete measure needs at least one atom");
  if (atoms.rows() != weights.size()) throw InputError("atom and weight counts differ");
  if (!atoms.allFinite()) throw InputError("atoms must be finite");
  check_simplex(weights, "atom weights");
  for (Eigen::Index i = 0; i < atoms.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (atoms.row(i) == atoms.row(j)) throw InputError("atoms must be distinct");
    }
  }
}

Eigen::Index dimension(const MeasureSpec& spec) {
  return std::visit([](const auto& s) { return s.dim(); }, spec);
}

PointCloud sample(const GaussianSpec& spec, std::size_t n, Rng& rng) {
  check_count(n);
  const Eigen::Index d = spec.dim();
  const Matrix L = gaussian_factor(spec);
  Matrix pts(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    pts.row(i) = (spec.mean + L * standard_normal(d, rng)).transpose();
  }
  return PointCloud(std::move(pts));
}

std::pair<PointCloud, std::vector<std::size_t>> sample_with_labels(const GmmSpec& spec, std::size_t n, Rng& rng) {
  check_count(n);
  const Eigen::Index d = spec.dim();
  std::vector<Matrix> factors;
  for (const auto& c : spec.components) factors.push_back(gaussian_factor(c));
  const Categorical pick(spec.weights);
  Matrix pts(static_cast<Eigen::Index>(n), d);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = pick(rng);
    labels[i] = c;
    pts.row(static_cast<Eigen::Index>(i)) = (spec.components[c].mean + factors[c] * standard_normal(d, rng)).transpose();
  }
  return {PointCloud(std::move(pts)), std::move(labels)};
}

PointCloud sample(const GmmSpec& spec, std::size_t n, Rng& rng) { return sample_with_labels(spec, n, rng).first; }

std::vector<std::size_t> sample_indices(const DiscreteMeasure& spec, std::size_t n, Rng& rng) {
  check_count(n);
  const Categorical pick(spec.weights);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

PointCloud sample(const DiscreteMeasure& spec, std::size_t n, Rng& rng) {
  const auto idx = sample_indices(spec, n, rng);
  Matrix pts(static_cast<Eigen::Index>(n), spec.dim());
  for (std::size_t i = 0; i < n; ++i) pts.row(static_cast<Eigen::Index>(i)) = spec.atoms.row(static_cast<Eigen::Index>(idx[i]));
  return PointCloud(std::move(pts));
}

PointCloud sample(const MeasureSpec& spec, std::size_t n, Rng& rng, const MalaOptions& mala) {
  return std::visit(
      [&](const auto& s) -> PointCloud {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LogConcaveSpec>) {
          return mala_sample(s, n, mala.step, mala.iters, rng);
        } else {
          return sample(s, n, rng);
        }
      },
      spec);
}

std::pair<double, Vector> log_density_grad(const LogConcaveSpec& spec, const Vector& x) {
  if (x.size() != spec.dim()) throw InputError("point has the wrong dimension");
  double value = -0.5 * spec.c * x.squaredNorm();
  Vector grad = -spec.c * x;
  if (spec.pieces() > 0) {
    Eigen::Index best = 0;
    double top = spec.slopes.row(0).dot(x) + spec.intercepts(0);
    for (Eigen::Index i = 1; i < spec.pieces(); ++i) {
      const double v = spec.slopes.row(i).dot(x) + spec.intercepts(i);
      if (v > top) {
        top = v;
        best = i;
      }
    }
    value += top;
    grad += spec.slopes.row(best).transpose();
  }
  return {value, grad};
}

Vector mala_proposal_mean(const LogConcaveSpec& spec, const Vector& x, double step) {
  return x + step * log_density_grad(spec, x).second;
}

namespace {

double log_proposal(const Vector& to, const Vector& mean, double step) { return -(to - mean).squaredNorm() / (4.0 * step); }

double log_acceptance(double lp_x, const Vector& mean_x, const Vector& x, double lp_y, const Vector& mean_y,
                      const Vector& y, double step) {
  return (lp_y - lp_x) + log_proposal(x, mean_y, step) - log_proposal(y, mean_x, step);
}

}  // namespace

double mala_acceptance(const LogConcaveSpec& spec, const Vector& x, const Vector& y, double step) {
  if (!(step > 0.0)) throw InputError("MALA step must be positive");
  const auto [lp_x, g_x] = log_density_grad(spec, x);
  const auto [lp_y, g_y] = log_density_grad(spec, y);
  if (!std::isfinite(lp_y)) return 0.0;
  const double la = log_acceptance(lp_x, x + step * g_x, x, lp_y, y + step * g_y, y, step);
  return la >= 0.0 ? 1.0 : std::exp(la);
}

PointCloud mala_sample(const LogConcaveSpec& spec, std::size_t n, double step, std::size_t iters, Rng& rng,
                       MalaStats* stats) {
  check_count(n);
  if (!(step > 0.0) || !std::isfinite(step)) throw InputError("MALA step must be positive");
  if (iters < 1) throw InputError("MALA needs at least one iteration");
  const Eigen::Index d = spec.dim();
  const double noise = std::sqrt(2.0 * step);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), d);
  std::size_t accepted = 0;
  Vector y(d);
  for (std::size_t chain = 0; chain < n; ++chain) {
    Vector x = Vector::Zero(d);
    auto [lp_x, g_x] = log_density_grad(spec, x);
    Vector mean_x = x + step * g_x;
    for (std::size_t t = 0; t < iters; ++t) {
      for (Eigen::Index k = 0; k < d; ++k) y(k) = mean_x(k) + noise * normal(rng);
      const double u = unif(rng);
      auto [lp_y, g_y] = log_density_grad(spec, y);
      if (!std::isfinite(lp_y) || !g_y.allFinite()) continue;
      const Vector mean_y = y + step * g_y;
      const double la = log_acceptance(lp_x, mean_x, x, lp_y, mean_y, y, step);
      if (la >= 0.0 || u < std::exp(la)) {
        x = y;
        lp_x = lp_y;
        mean_x = mean_y;
        ++accepted;
      }
    }
    out.row(static_cast<Eigen::Index>(chain)) = x.transpose();
  }
  if (stats != nullptr) {
    stats->proposals += n * iters;
    stats->accepted += accepted;
  }
  return PointCloud(std::move(out));
}

double trace_covariance(const MeasureSpec& spec, Rng& rng, std::size_t mc_samples, const MalaOptions& mala) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianSpec>) {
          return s.covariance.matrix().trace();
        } else if constexpr (std::is_same_v<T, GmmSpec>) {
          double second = 0.0;
          Vector mean = Vector::Zero(s.dim());
          for (std::size_t i = 0; i < s.components.size(); ++i) {
            const double w = s.weights(static_cast<Eigen::Index>(i));
            const auto& c = s.components[i];
            second += w * (c.covariance.matrix().trace() + c.mean.squaredNorm());
            mean += w * c.mean;
          }
          return second - mean.squaredNorm();
        } else if constexpr (std::is_same_v<T, DiscreteMeasure>) {
          const Vector mean = s.atoms.transpose() * s.weights;
          double second = 0.0;
          for (Eigen::Index i = 0; i < s.size(); ++i) second += s.weights(i) * s.atoms.row(i).squaredNorm();
          return second - mean.squaredNorm();
        } else {
          const PointCloud draws = mala_sample(s, mc_samples, mala.step, mala.iters, rng);
          const Matrix centered = draws.points().rowwise() - draws.points().colwise().mean();
          return centered.squaredNorm() / static_cast<double>(draws.size() - 1);
        }
      },
      spec);
}

SpdMatrix random_covariance(Eigen::Index d, double eig_lo, double eig_hi, Rng& rng) {
  if (d < 1) throw InputError("dimension must be at least 1");
  if (!(eig_lo > 0.0) || !(eig_hi >= eig_lo)) throw InputError("eigenvalue range must be positive and ordered");
  Eigen::MatrixXd G(d, d);
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) G(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign fix so Q is Haar-distributed.
  for (Eigen::Index j = 0; j < d; ++j) {
    if (R(j, j) < 0.0) Q.col(j) *= -1.0;
  }
  std::uniform_real_distribution<double> unif(eig_lo, eig_hi);
  Vector eig(d);
  for (Eigen::Index i = 0; i < d; ++i) eig(i) = unif(rng);
  const Eigen::MatrixXd S = Q * eig.asDiagonal() * Q.transpose();
  return SpdMatrix(0.5 * (S + S.transpose()));
}

Family parse_family(const std::string& name) {
  if (name == "gaussian") return Family::gaussian;
  if (name == "gmm") return Family::gmm;
  if (name == "logconcave") return Family::logconcave;
  throw InputError("unknown measure family '" + name + "' (expected gaussian, gmm or logconcave)");
}

std::string family_name(Family family) {
  switch (family) {
    case Family::gaussian:
      return "gaussian";
    case Family::gmm:
      return "gmm";
    case Family::logconcave:
      return "logconcave";
  }
  return "unknown";
}

MeasurePair random_family_spec(Family family, Eigen::Index d, Rng& rng) {
  if (d < 1) throw InputError("dimension must be at least 1");
  const double dd = static_cast<double>(d);
  Vector shift = Vector::Zero(d);
  shift(0) = 2.0;
  switch (family) {
    case Family::gaussian: {
      SpdMatrix S = random_covariance(d, 1.0 / (10.0 * dd), 1.0 / dd, rng);
      SpdMatrix S2 = random_covariance(d, 1.0 / (10.0 * dd), 1.0 / dd, rng);
      return {GaussianSpec(Vector::Zero(d), std::move(S)), GaussianSpec(shift, std::move(S2))};
    }
    case Family::gmm: {
      GmmSpec mu = random_gmm(d, 10, Vector::Zero(d), rng);
      GmmSpec nu = random_gmm(d, 15, shift, rng);
      return {std::move(mu), std::move(nu)};
    }
    case Family::logconcave: {
      const double scale = 5.0 / dd;
      LogConcaveSpec mu = random_logconcave(d, 4 * d, 1.0 * scale, rng);
      LogConcaveSpec nu = random_logconcave(d, 4 * d, 0.75 * scale, rng);
      return {std::move(mu), std::move(nu)};
    }
  }
  throw InputError("unknown measure family");
}

const std::vector<PresetInfo>& preset_catalog() {
  static const std::vector<PresetInfo> catalog{
      {"fig1-gaussians",
       "Gaussian pair in d=5: N(0, I) -> N((2,1,0,-1,-2), diag(2, 0.5, 1, 0.1, 5)); closed-form map available", false,
       5},
      {"fig2-logconcave",
       "log-concave pair in d=5: c = 1 and 0.75, 20 random affine pieces each, sampled by MALA (500 steps, step 0.01)",
       true, 5},
      {"fig3-gmm",
       "fixed GMM pair in d=5: 4 components each, alpha = (0.25, 0.25, 0.25, 0.25), beta = (0.1, 0.2, 0.3, 0.4)",
       false, 5},
      {"dim-sweep-gaussian",
       "N(0, S) -> N(2 e1, S'), S = U D U^T with Haar U and eigenvalues ~ U[1/(10d), 1/d]", true, 0},
      {"dim-sweep-gmm",
       "10 -> 15 component GMMs, means ~ N(0, I/d) and N(2 e1, I/d), Dirichlet(1) weights, covariances (w/d) I",
       true, 0},
      {"dim-sweep-logconcave", "log-concave pair with 4d affine pieces and c = 1, 0.75 scaled by 5/d", true, 0},
  };
  return catalog;
}

const PresetInfo& preset_info(const std::string& name) {
  for (const auto& p : preset_catalog()) {
    if (p.name == name) return p;
  }
  throw InputError("unknown preset '" + name + "'");
}

MeasurePair preset_pair(const std::string& name, Eigen::Index d, Rng& rng) {
  const PresetInfo& info = preset_info(name);
  if (info.fixed_dim != 0 && d != 0 && d != info.fixed_dim) {
    throw InputError("preset " + name + " is defined only for d = " + std::to_string(info.fixed_dim));
  }
  if (d == 0) d = info.fixed_dim != 0 ? info.fixed_dim : 5;
  if (name == "fig1-gaussians") return fig1_pair();
  if (name == "fig3-gmm") return fig3_pair();
  if (name == "fig2-logconcave" || name == "dim-sweep-logconcave") return random_family_spec(Family::logconcave, d, rng);
  if (name == "dim-sweep-gaussian") return random_family_spec(Family::gaussian, d, rng);
  return random_family_spec(Family::gmm, d, rng);
}

}  // namespace entmap
