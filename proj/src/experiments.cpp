#include "entmap/experiments.hpp"

#include "entmap/error.hpp"
#include "entmap/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <string>

namespace entmap {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kOracleKey = 0x6f7261636c65ULL;
constexpr std::uint64_t kEvalKey = 0x6576616cULL;
constexpr std::uint64_t kSummaryKey = 0x73756d6dULL;

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

void check_run(const RunOptions& run, std::size_t min_reps) {
  if (run.reps < min_reps) throw InputError("need at least " + std::to_string(min_reps) + " replications");
  if (run.n_eval < 1) throw InputError("n_eval must be at least 1");
  if (!(run.failure_budget >= 0.0 && run.failure_budget <= 1.0)) throw InputError("failure budget must lie in [0, 1]");
}

void enforce_budget(const std::string& what, std::size_t failed, std::size_t total, double budget) {
  if (static_cast<double>(failed) > budget * static_cast<double>(total)) {
    throw ExperimentFailure(what + ": " + std::to_string(failed) + " of " + std::to_string(total) +
                                " solves failed, above the failure budget",
                            failed, total);
  }
}

PointCloud shuffled(const PointCloud& cloud, Rng& rng) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(cloud.size()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix pts(cloud.size(), cloud.dim());
  for (std::size_t i = 0; i < perm.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = cloud.point(perm[i]);
  return PointCloud(std::move(pts));
}

std::uint64_t bits_of(double v) {
  std::uint64_t u = 0;
  std::memcpy(&u, &v, sizeof(u));
  return u;
}

}  // namespace

KRule KRule::parse(const std::string& text) {
  KRule rule;
  if (text == "cbrt" || text == "n^1/3" || text == "n^(1/3)") {
    rule.cube_root = true;
    return rule;
  }
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || v < 1) {
    throw InputError("k rule must be a positive integer or 'cbrt', got '" + text + "'");
  }
  rule.fixed = static_cast<std::size_t>(v);
  return rule;
}

std::size_t KRule::k_for(std::size_t n) const {
  if (!cube_root) return fixed;
  if (n == 0) throw InputError("sample size must be positive");
  const double target = std::log(std::cbrt(static_cast<double>(n)));
  std::size_t best = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= n; ++k) {
    if (n % k != 0) continue;
    const double gap = std::abs(std::log(static_cast<double>(k)) - target);
    if (gap < best_gap - 1e-12) {
      best_gap = gap;
      best = k;
    }
  }
  return best;
}

std::string KRule::label() const { return cube_root ? "kcbrt" : "k" + std::to_string(fixed); }

double mc_map_error(const Matrix& estimate, const Matrix& reference, int p) {
  if (estimate.rows() != reference.rows() || estimate.cols() != reference.cols()) {
    throw InputError("map evaluations have different shapes");
  }
  if (p != 1 && p != 2) throw InputError("p must be 1 or 2");
  if (estimate.rows() == 0) throw InputError("no evaluation points");
  double total = 0.0;
  for (Eigen::Index i = 0; i < estimate.rows(); ++i) {
    const double sq = (estimate.row(i) - reference.row(i)).squaredNorm();
    total += p == 2 ? sq : std::sqrt(sq);
  }
  return total / static_cast<double>(estimate.rows());
}

SlopeFit loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw InputError("slope fit needs at least two points");
  std::vector<double> lx, ly;
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0) || !std::isfinite(x) || !std::isfinite(y)) {
      throw InputError("log-log fit needs positive finite coordinates");
    }
    lx.push_back(std::log(x));
    ly.push_back(std::log(y));
  }
  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw InputError("slope fit needs at least two distinct x values");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  if (lx.size() > 2) {
    const double intercept = my - fit.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      const double r = ly[i] - (intercept + fit.slope * lx[i]);
      rss += r * r;
    }
    fit.std_error = std::sqrt(rss / (n - 2.0) / sxx);
  }
  return fit;
}

BootstrapSummary bootstrap_mean(const std::vector<double>& values, std::size_t resamples, Rng& rng) {
  if (values.empty()) throw InputError("bootstrap needs at least one value");
  BootstrapSummary out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() == 1 || resamples == 0) {
    out.lo = out.hi = out.mean;
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (auto& mv : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    mv = s / static_cast<double>(values.size());
  }
  const double mm = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(resamples);
  double var = 0.0;
  for (const double v : means) var += (v - mm) * (v - mm);
  out.std_error = std::sqrt(var / static_cast<double>(resamples - 1));
  std::sort(means.begin(), means.end());
  const auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples - 1)));
    return means[std::min(idx, resamples - 1)];
  };
  out.lo = at(0.025);
  out.hi = at(0.975);
  return out;
}

std::vector<SeriesSummary> summarize(const std::vector<Record>& records, std::size_t resamples, std::uint64_t seed) {
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, std::uint64_t>, std::map<double, std::vector<double>>> groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.metric, bits_of(r.epsilon));
    if (!groups.count(key)) keys.emplace_back(r.metric, r.epsilon);
    if (std::isfinite(r.value)) {
      groups[key][r.sweep_value].push_back(r.value);
    } else {
      groups[key][r.sweep_value];
    }
  }
  std::vector<SeriesSummary> out;
  for (std::size_t s = 0; s < keys.size(); ++s) {
    SeriesSummary series;
    series.metric = keys[s].first;
    series.epsilon = keys[s].second;
    std::vector<std::pair<double, double>> pts;
    bool positive = true;
    std::size_t idx = 0;
    for (const auto& [x, values] : groups[{keys[s].first, bits_of(keys[s].second)}]) {
      series.sweep.push_back(x);
      series.count.push_back(values.size());
      if (values.empty()) {
        series.mean.push_back(nan());
        series.std_error.push_back(nan());
        series.ci_lo.push_back(nan());
        series.ci_hi.push_back(nan());
        positive = false;
        ++idx;
        continue;
      }
      Rng rng = derive_rng(seed, {kSummaryKey, s, idx++});
      const BootstrapSummary b = bootstrap_mean(values, resamples, rng);
      series.mean.push_back(b.mean);
      series.std_error.push_back(b.std_error);
      series.ci_lo.push_back(b.lo);
      series.ci_hi.push_back(b.hi);
      if (!(b.mean > 0.0)) positive = false;
      pts.emplace_back(x, b.mean);
    }
    if (positive && pts.size() >= 2) {
      series.fit = loglog_slope(pts);
    } else {
      series.fit.degenerate = true;
      series.fit.slope = nan();
      series.fit.std_error = nan();
    }
    out.push_back(std::move(series));
  }
  return out;
}

void validate_sweep(const std::vector<std::size_t>& sweep, const std::vector<KRule>& rules) {
  if (sweep.empty()) throw InputError("sweep must contain at least one value");
  if (rules.empty()) throw InputError("at least one k rule is required");
  for (const std::size_t n : sweep) {
    if (n < 1) throw InputError("sweep values must be positive integers");
    for (const auto& rule : rules) {
      const std::size_t k = rule.k_for(n);
      if (k < 1 || n % k != 0) {
        throw InputError("sweep value " + std::to_string(n) + " is not divisible by k = " + std::to_string(k));
      }
    }
  }
}

namespace {

void finalize(ExperimentResult& result, const RunOptions& run) {
  result.series = summarize(result.records, run.bootstrap_resamples, run.seed);
  if (!result.series.empty() && !result.series.front().fit.degenerate) {
    result.fitted_slope = result.series.front().fit.slope;
    result.slope_stderr = result.series.front().fit.std_error;
  } else {
    result.fitted_slope = nan();
    result.slope_stderr = nan();
  }
}

}  // namespace

ExperimentResult rate_experiment(const MeasurePair& measures, double epsilon, const RateOptions& options) {
  const RunOptions& run = options.run;
  check_run(run, 1);
  validate_sweep(options.sweep, options.k_rules);
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
  const Eigen::Index d = dimension(measures.mu);
  if (dimension(measures.nu) != d) throw InputError("source and target dimensions differ");

  // Reference map: closed form on fresh points, or a large-sample
  // estimator evaluated at one shared set of points.
  std::optional<GaussianEntropicMap> closed;
  Matrix shared_eval, shared_ref;
  if (options.reference == Reference::closed_form) {
    const auto* g0 = std::get_if<GaussianSpec>(&measures.mu);
    const auto* g1 = std::get_if<GaussianSpec>(&measures.nu);
    if (g0 == nullptr || g1 == nullptr) throw InputError("closed-form reference needs Gaussian source and target");
    closed.emplace(g0->mean, g0->covariance, g1->mean, g1->covariance, epsilon);
  } else {
    const std::size_t n_max = *std::max_element(options.sweep.begin(), options.sweep.end());
    const std::size_t n_oracle = options.oracle_factor * n_max;
    Rng rng = derive_rng(run.seed, {kOracleKey});
    shared_eval = sample(measures.mu, run.n_eval, rng, run.mala).points();
    const PointCloud X = sample(measures.mu, n_oracle, rng, run.mala);
    const PointCloud Y = sample(measures.nu, n_oracle, rng, run.mala);
    shared_ref = InSampleMap(X, Y, epsilon, run.solver).evaluate(shared_eval);
  }

  const std::size_t R = run.reps;
  const std::size_t rules = options.k_rules.size();
  const std::size_t tasks = options.sweep.size() * R;
  std::vector<std::vector<double>> errors(tasks, std::vector<double>(rules, nan()));

  parallel_for(tasks, run.threads, [&](std::size_t t) {
    const std::size_t n = options.sweep[t / R];
    const std::size_t rep = t % R;
    Rng rng = derive_rng(run.seed, {n, rep});
    PointCloud X = sample(measures.mu, n, rng, run.mala);
    PointCloud Y = sample(measures.nu, n, rng, run.mala);
    Matrix eval = shared_eval;
    Matrix ref = shared_ref;
    if (closed) {
      Rng eval_rng = derive_rng(run.seed, {kEvalKey, n, rep});
      eval = sample(measures.mu, run.n_eval, eval_rng, run.mala).points();
      ref = closed->apply(eval);
    }
    if (options.shuffle) {
      X = shuffled(X, rng);
      Y = shuffled(Y, rng);
    }
    for (std::size_t r = 0; r < rules; ++r) {
      EstimatorConfig cfg;
      cfg.epsilon = epsilon;
      cfg.k = options.k_rules[r].k_for(n);
      cfg.solver = run.solver;
      try {
        const BatchedMap est(X, Y, cfg);
        errors[t][r] = mc_map_error(est.evaluate(eval), ref, 2);
      } catch (const ConvergenceError&) {
        errors[t][r] = nan();
      }
    }
  });

  ExperimentResult result;
  result.experiment = "rate";
  for (std::size_t t = 0; t < tasks; ++t) {
    for (std::size_t r = 0; r < rules; ++r) {
      ++result.attempts;
      if (!std::isfinite(errors[t][r])) {
        ++result.failures;
        continue;
      }
      result.records.push_back({"rate", static_cast<double>(options.sweep[t / R]), epsilon, d, t % R,
                                "sq_l2_" + options.k_rules[r].label(), errors[t][r]});
    }
  }
  enforce_budget("rate experiment", result.failures, result.attempts, run.failure_budget);
  finalize(result, run);
  return result;
}

namespace {

// One replication of the two-sample variance identity.
double variance_rep(const MeasureSpec& mu, const MeasureSpec& nu, double epsilon, std::size_t m, std::size_t k,
                    const RunOptions& run, Rng& rng) {
  const PointCloud X = sample(mu, m, rng, run.mala);
  const PointCloud Y = sample(nu, m, rng, run.mala);
  const PointCloud X2 = sample(mu, m, rng, run.mala);
  const PointCloud Y2 = sample(nu, m, rng, run.mala);
  const Matrix eval = sample(mu, run.n_eval, rng, run.mala).points();
  const InSampleMap T(X, Y, epsilon, run.solver);
  const InSampleMap T2(X2, Y2, epsilon, run.solver);
  return mc_map_error(T.evaluate(eval), T2.evaluate(eval), 2) / (2.0 * static_cast<double>(k));
}

}  // namespace

VarianceEstimate variance_term(const MeasureSpec& mu, const MeasureSpec& nu, double epsilon, std::size_t m,
                               std::size_t k, const RunOptions& run) {
  check_run(run, 2);
  if (m < 1 || k < 1) throw InputError("m and k must be at least 1");
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
  std::vector<double> values(run.reps, nan());
  parallel_for(run.reps, run.threads, [&](std::size_t rep) {
    Rng rng = derive_rng(run.seed, {m, rep});
    try {
      values[rep] = variance_rep(mu, nu, epsilon, m, k, run, rng);
    } catch (const ConvergenceError&) {
      values[rep] = nan();
    }
  });
  VarianceEstimate out;
  for (const double v : values) {
    if (std::isfinite(v)) {
      out.per_rep.push_back(v);
    } else {
      ++out.failures;
    }
  }
  enforce_budget("variance term", out.failures, run.reps, run.failure_budget);
  if (out.per_rep.empty()) throw ExperimentFailure("variance term: every replication failed", out.failures, run.reps);
  Rng brng = derive_rng(run.seed, {kSummaryKey, m});
  const BootstrapSummary b = bootstrap_mean(out.per_rep, run.bootstrap_resamples, brng);
  out.value = b.mean;
  out.std_error = b.std_error;
  return out;
}

ExperimentResult variance_experiment(const MeasurePair& measures, const VarianceOptions& options) {
  const RunOptions& run = options.run;
  check_run(run, 2);
  if (options.sweep.empty()) throw InputError("sweep must contain at least one batch size");
  if (options.epsilons.empty()) throw InputError("at least one epsilon is required");
  for (const double e : options.epsilons) {
    if (!(e > 0.0)) throw InputError("epsilon must be positive");
  }
  std::vector<std::size_t> ks;
  for (const std::size_t m : options.sweep) {
    if (m < 1) throw InputError("batch sizes must be positive integers");
    if (options.mode == VarianceSweep::fixed_k) {
      if (options.k < 1) throw InputError("k must be at least 1");
      ks.push_back(options.k);
    } else {
      if (options.n < 1 || options.n % m != 0) {
        throw InputError("sample size n = " + std::to_string(options.n) + " is not divisible by m = " +
                         std::to_string(m));
      }
      ks.push_back(options.n / m);
    }
  }
  const Eigen::Index d = dimension(measures.mu);
  const std::size_t R = run.reps;
  const std::size_t cells = options.epsilons.size() * options.sweep.size();
  std::vector<double> values(cells * R, nan());
  parallel_for(cells * R, run.threads, [&](std::size_t t) {
    const std::size_t cell = t / R;
    const std::size_t rep = t % R;
    const double eps = options.epsilons[cell / options.sweep.size()];
    const std::size_t a = cell % options.sweep.size();
    // Keyed by (m, rep) only: every epsilon sees the same samples.
    Rng rng = derive_rng(run.seed, {options.sweep[a], rep});
    try {
      values[t] = variance_rep(measures.mu, measures.nu, eps, options.sweep[a], ks[a], run, rng);
    } catch (const ConvergenceError&) {
      values[t] = nan();
    }
  });
  ExperimentResult result;
  result.experiment = "variance";
  for (std::size_t t = 0; t < values.size(); ++t) {
    ++result.attempts;
    if (!std::isfinite(values[t])) {
      ++result.failures;
      continue;
    }
    const std::size_t cell = t / R;
    result.records.push_back({"variance", static_cast<double>(options.sweep[cell % options.sweep.size()]),
                              options.epsilons[cell / options.sweep.size()], d, t % R, "variance", values[t]});
  }
  enforce_budget("variance experiment", result.failures, result.attempts, run.failure_budget);
  finalize(result, run);
  return result;
}

DiscreteMeasure circle_measure(std::size_t atoms, bool ramp) {
  if (atoms < 1) throw InputError("need at least one atom");
  Matrix pts(static_cast<Eigen::Index>(atoms), 2);
  Vector w(static_cast<Eigen::Index>(atoms));
  for (std::size_t k = 0; k < atoms; ++k) {
    const double angle = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(atoms);
    pts(static_cast<Eigen::Index>(k), 0) = std::cos(angle);
    pts(static_cast<Eigen::Index>(k), 1) = std::sin(angle);
    w(static_cast<Eigen::Index>(k)) = ramp ? static_cast<double>(k + 1) : 1.0;
  }
  w /= w.sum();
  return DiscreteMeasure(std::move(pts), std::move(w));
}

KlGapReport kl_gap_check(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double epsilon,
                         const KlGapOptions& options) {
  const RunOptions& run = options.run;
  check_run(run, 200);
  if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
  if (options.m < 1 || options.m > 64) throw InputError("m must lie in [1, 64]");
  if (mu.size() > 16 || nu.size() > 16) throw InputError("at most 16 atoms per measure");
  if (mu.dim() != nu.dim()) throw InputError("discrete measures have different dimensions");
  const Eigen::Index p = mu.size();
  const Eigen::Index q = nu.size();

  const PointCloud A = mu.cloud();
  const PointCloud B = nu.cloud();
  const DualPotentials exact_pot = solve(A, B, epsilon, run.solver);
  const double exact_cost = eot_cost(exact_pot, A, B);
  KlGapReport report;
  report.exact = plan_density(exact_pot, A, B).p;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) report.exact(i, j) *= mu.weights(i) * nu.weights(j);

  struct RepResult {
    Matrix pooled;
    double gap = 0.0;
    bool ok = false;
  };
  std::vector<RepResult> reps(run.reps);
  const auto m = static_cast<Eigen::Index>(options.m);
  parallel_for(run.reps, run.threads, [&](std::size_t rep) {
    Rng rng = derive_rng(run.seed, {options.m, rep});
    const auto ix = sample_indices(mu, options.m, rng);
    const auto iy = sample_indices(nu, options.m, rng);
    Matrix X(m, mu.dim()), Y(m, nu.dim());
    for (Eigen::Index i = 0; i < m; ++i) {
      X.row(i) = mu.atoms.row(static_cast<Eigen::Index>(ix[static_cast<std::size_t>(i)]));
      Y.row(i) = nu.atoms.row(static_cast<Eigen::Index>(iy[static_cast<std::size_t>(i)]));
    }
    const PointCloud Xc(std::move(X)), Yc(std::move(Y));
    try {
      const DualPotentials pot = solve(Xc, Yc, epsilon, run.solver);
      const double cost = eot_cost(pot, Xc, Yc);
      const Matrix dens = plan_density(pot, Xc, Yc).p;
      Matrix pooled = Matrix::Zero(p, q);
      const double w = 1.0 / static_cast<double>(m * m);
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
          pooled(static_cast<Eigen::Index>(ix[static_cast<std::size_t>(i)]),
                 static_cast<Eigen::Index>(iy[static_cast<std::size_t>(j)])) += w * dens(i, j);
        }
      reps[rep] = {std::move(pooled), std::abs(cost - exact_cost), true};
    } catch (const ConvergenceError&) {
      reps[rep].ok = false;
    }
  });

  report.pooled = Matrix::Zero(p, q);
  std::vector<double> gaps;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++report.failures;
      continue;
    }
    report.pooled += r.pooled;
    gaps.push_back(r.gap);
  }
  enforce_budget("KL gap check", report.failures, run.reps, run.failure_budget);
  if (gaps.empty()) throw ExperimentFailure("KL gap check: every replication failed", report.failures, run.reps);
  report.pooled /= static_cast<double>(gaps.size());

  // Generalised KL (sum t log(t/s) - t + s): equal to KL for probability
  // vectors and nonnegative when the total masses differ by solver round-off.
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) {
      const double t = report.pooled(i, j);
      const double s = report.exact(i, j);
      kl += (t > 0.0 ? t * std::log(t / s) : 0.0) - t + s;
    }
  report.lhs = kl;
  Rng brng = derive_rng(run.seed, {kSummaryKey, options.m});
  const BootstrapSummary b = bootstrap_mean(gaps, run.bootstrap_resamples, brng);
  report.rhs = b.mean / epsilon;
  report.rhs_stderr = b.std_error / epsilon;
  const double row_gap = (report.pooled.rowwise().sum() - mu.weights).cwiseAbs().sum();
  const double col_gap = (report.pooled.colwise().sum().transpose() - nu.weights).cwiseAbs().sum();
  report.marginal_gap = std::max(row_gap, col_gap);
  return report;
}

}  // namespace entmap
