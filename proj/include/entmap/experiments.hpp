#ifndef ENTMAP_EXPERIMENTS_HPP_
#define ENTMAP_EXPERIMENTS_HPP_

#include "entmap/core.hpp"
#include "entmap/estimators.hpp"
#include "entmap/measures.hpp"
#include "entmap/sinkhorn.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace entmap {

/// Raised when more replications fail than the failure budget allows.
class ExperimentFailure : public std::runtime_error {
 public:
  ExperimentFailure(const std::string& what, std::size_t failed, std::size_t total)
      : std::runtime_error(what), failed_(failed), total_(total) {}
  std::size_t failed() const { return failed_; }
  std::size_t total() const { return total_; }

 private:
  std::size_t failed_;
  std::size_t total_;
};

struct Record {
  std::string experiment;
  double sweep_value = 0.0;
  double epsilon = 0.0;
  Eigen::Index d = 0;
  std::size_t replication = 0;
  std::string metric;
  double value = 0.0;
};

struct SlopeFit {
  double slope = 0.0;
  double std_error = 0.0;
  /// Set when the fit could not be formed (fewer than two positive means).
  bool degenerate = false;
};

/// Per-sweep aggregate of one (metric, epsilon) series.
struct SeriesSummary {
  std::string metric;
  double epsilon = 0.0;
  std::vector<double> sweep;
  std::vector<double> mean;
  std::vector<double> std_error;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  std::vector<std::size_t> count;
  SlopeFit fit;
};

struct ExperimentResult {
  std::string experiment;
  std::vector<Record> records;
  std::vector<SeriesSummary> series;
  /// Fit of the first series; NaN when it is degenerate.
  double fitted_slope = 0.0;
  double slope_stderr = 0.0;
  std::size_t failures = 0;
  std::size_t attempts = 0;
};

/// Batch-count rule: a fixed k, or k = n^{1/3} rounded to the divisor of n
/// nearest on a log scale (ties go to the smaller divisor).
struct KRule {
  bool cube_root = false;
  std::size_t fixed = 1;

  static KRule parse(const std::string& text);
  std::size_t k_for(std::size_t n) const;
  /// Metric suffix: "k<fixed>" or "kcbrt".
  std::string label() const;
};

/// p = 2: mean squared distance between rows; p = 1: mean distance.
double mc_map_error(const Matrix& estimate, const Matrix& reference, int p);

/// OLS fit of log y on log x. Throws InputError for fewer than two points or
/// nonpositive coordinates.
SlopeFit loglog_slope(const std::vector<std::pair<double, double>>& points);

struct BootstrapSummary {
  double mean = 0.0;
  double std_error = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap of the mean (95% interval).
BootstrapSummary bootstrap_mean(const std::vector<double>& values, std::size_t resamples, Rng& rng);

/// Groups records by (metric, epsilon), averages per sweep value and fits the
/// log-log slope of each series.
std::vector<SeriesSummary> summarize(const std::vector<Record>& records, std::size_t resamples, std::uint64_t seed);

struct RunOptions {
  std::size_t reps = 20;
  std::size_t n_eval = 500;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SolverOptions solver;
  MalaOptions mala;
  /// Largest tolerated fraction of failed replications.
  double failure_budget = 0.1;
  std::size_t bootstrap_resamples = 1000;
};

enum class Reference { closed_form, large_n_oracle };

struct RateOptions {
  RunOptions run;
  std::vector<std::size_t> sweep;
  std::vector<KRule> k_rules{KRule{}};
  Reference reference = Reference::closed_form;
  std::size_t oracle_factor = 10;
  /// Shuffle each sample before splitting into batches.
  bool shuffle = true;
};

/// Validates that every n in the sweep is divisible by its k. Throws
/// InputError naming the first offending pair.
void validate_sweep(const std::vector<std::size_t>& sweep, const std::vector<KRule>& rules);

/// Map-error curve: for each (n, replication) draws n-samples, builds the
/// batched estimator for each k rule and records the squared L2(mu) error
/// against the reference at n_eval evaluation points. Metric names are
/// "sq_l2_<k label>".
ExperimentResult rate_experiment(const MeasurePair& measures, double epsilon, const RateOptions& options);

struct VarianceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::vector<double> per_rep;
  std::size_t failures = 0;
};

/// (1 / 2k) E||T - T'||^2_{L2(mu)} for two single-batch estimators of size m
/// built on independent samples.
VarianceEstimate variance_term(const MeasureSpec& mu, const MeasureSpec& nu, double epsilon, std::size_t m,
                               std::size_t k, const RunOptions& options);

enum class VarianceSweep { fixed_k, fixed_n };

struct VarianceOptions {
  RunOptions run;
  std::vector<std::size_t> sweep;  // batch sizes m
  std::vector<double> epsilons;
  VarianceSweep mode = VarianceSweep::fixed_k;
  /// Batch count for fixed_k, total sample size n for fixed_n (k = n / m).
  std::size_t k = 1;
  std::size_t n = 0;
};

/// Variance curves over m for each epsilon; metric "variance", one record
/// per (m, epsilon, replication).
ExperimentResult variance_experiment(const MeasurePair& measures, const VarianceOptions& options);

struct KlGapOptions {
  RunOptions run;
  std::size_t m = 8;
};

struct KlGapReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double rhs_stderr = 0.0;
  double marginal_gap = 0.0;
  Matrix pooled;  // averaged empirical plan by atom pair
  Matrix exact;   // optimal plan between the discrete measures
  std::size_t failures = 0;
};

/// Compares the averaged sample coupling with the exact entropic plan on a
/// shared atom grid.
KlGapReport kl_gap_check(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double epsilon,
                         const KlGapOptions& options);

/// p atoms evenly spaced on the unit circle. Weights are uniform, or
/// proportional to 1..p when `ramp` is set.
DiscreteMeasure circle_measure(std::size_t atoms, bool ramp);

// Output.
void write_records_csv(std::ostream& out, const std::vector<Record>& records);
std::vector<Record> read_records_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const ExperimentResult& result);
/// Self-contained log-log plot, one polyline per series.
void write_svg_plot(std::ostream& out, const ExperimentResult& result, const std::string& title,
                    const std::string& x_label, const std::string& y_label);

}  // namespace entmap

#endif  // ENTMAP_EXPERIMENTS_HPP_
