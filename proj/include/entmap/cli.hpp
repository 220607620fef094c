#ifndef ENTMAP_CLI_HPP_
#define ENTMAP_CLI_HPP_

#include "entmap/config_file.hpp"
#include "entmap/measures.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace entmap {

enum ExitCode : int {
  kExitOk = 0,
  kExitThresholdFailed = 1,
  kExitConfigError = 2,
  kExitBudgetExceeded = 3,
  kExitInternalError = 4,
};

struct RunConfig {
  std::string experiment;  // rate | variance | kl-gap | map-eval

  // Measures: a named preset, or inline [mu] / [nu] specs from a config file.
  std::string preset;
  std::optional<MeasurePair> inline_measures;
  Eigen::Index d = 0;

  std::vector<double> epsilons{1.0};
  std::vector<std::size_t> sweep;
  std::vector<std::string> k_rules{"1"};
  std::size_t reps = 20;
  std::size_t n_eval = 500;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::size_t threads = 0;

  // rate
  std::string reference = "auto";  // auto | closed-form | oracle
  std::size_t oracle_factor = 10;
  bool shuffle = true;

  // variance
  std::string variance_mode = "fixed-k";  // fixed-k | fixed-n
  std::size_t n = 0;                      // fixed-n total size; map-eval sample size
  bool variance_bound = true;

  // kl-gap
  std::size_t atoms = 2;
  bool ramp = false;
  std::vector<std::size_t> m{8};

  double tol = 1e-9;
  std::size_t max_iter = 100000;
  double mala_step = 0.01;
  std::size_t mala_iters = 500;
  double failure_budget = 0.1;
  std::size_t bootstrap_resamples = 1000;

  std::optional<double> slope_min;
  std::optional<double> slope_max;
  std::optional<double> gap_max;

  bool dump_potentials = false;

  /// "file:line" of each setting read from a config file, for messages.
  std::map<std::string, std::string> origins;
};

/// Applies the keys of a config file on top of `base`. Unknown keys and
/// ill-typed values raise ConfigError with the offending line.
RunConfig apply_config(const ConfigFile& file, RunConfig base);

/// Checks sweep values, divisibility and the mandatory seed before any solve.
void validate(const RunConfig& config);

/// Runs the configured experiment, writes CSV/SVG artifacts to out_dir and
/// prints slopes and threshold verdicts to `out`. Returns an ExitCode.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

void list_presets(std::ostream& out);

/// Serialises a measure as an inline config section that apply_config reads
/// back exactly.
void write_measure_section(std::ostream& out, const std::string& section, const MeasureSpec& spec);
MeasureSpec read_measure_section(const ConfigFile& file, const std::string& section);

/// Full command-line entry point (argv without the program name).
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace entmap

#endif  // ENTMAP_CLI_HPP_
