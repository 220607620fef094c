#include "entmap/cli.hpp"

#include "entmap/error.hpp"
#include "entmap/estimators.hpp"
#include "entmap/experiments.hpp"
#include "entmap/parallel.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace entmap {

namespace {

constexpr std::uint64_t kPresetKey = 0x707265736574ULL;
constexpr std::uint64_t kMapEvalKey = 0x6d61706576ULL;
constexpr std::uint64_t kBoundKey = 0x626f756e64ULL;

const std::vector<std::string> kExperiments{"rate", "variance", "kl-gap", "map-eval"};

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string exact(double v) { return fmt(v, "%.17g"); }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
  }
  return out;
}

double parse_real(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw InputError(what + ": '" + text + "' is not a finite number");
}

std::size_t parse_count(const std::string& text, const std::string& what) {
  const bool digits = !text.empty() && std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; });
  if (!digits) throw InputError(what + ": '" + text + "' is not a nonnegative integer");
  try {
    return static_cast<std::size_t>(std::stoull(text));
  } catch (const std::exception&) {
    throw InputError(what + ": '" + text + "' is out of range");
  }
}

std::vector<double> parse_reals(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_real(item, what));
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(parse_count(item, what));
  return out;
}

std::size_t count_value(const ConfigFile& f, const std::string& key) { return f.count(key); }

std::vector<std::size_t> counts_value(const ConfigFile& f, const std::string& key) {
  std::vector<std::size_t> out;
  for (const double v : f.numbers(key)) {
    if (v < 0 || v != std::floor(v)) {
      throw ConfigError(f.source(), f.line_of(key), "'" + key + "' must contain nonnegative integers");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

template <typename M>
std::vector<double> flat(const Eigen::MatrixBase<M>& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

void write_array(std::ostream& out, const std::string& key, const std::vector<double>& values) {
  out << key << " = [";
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? ", " : "") << exact(values[i]);
  out << "]\n";
}

void write_array(std::ostream& out, const std::string& key, const Vector& v) {
  write_array(out, key, std::vector<double>(v.data(), v.data() + v.size()));
}

struct SectionReader {
  const ConfigFile& file;
  std::string section;

  std::string key(const std::string& k) const { return section + "." + k; }

  [[noreturn]] void fail(const std::string& k, const std::string& message) const {
    const std::string full = key(k);
    const std::size_t line = file.has(full) ? file.line_of(full) : 0;
    throw ConfigError(file.source(), line, "[" + section + "] " + message);
  }

  std::vector<double> array(const std::string& k, std::size_t expected) const {
    if (!file.has(key(k))) fail(k, "missing '" + k + "'");
    auto v = file.numbers(key(k));
    if (v.size() != expected) {
      fail(k, "'" + k + "' has " + std::to_string(v.size()) + " values, expected " + std::to_string(expected));
    }
    return v;
  }

  Matrix matrix(const std::string& k, Eigen::Index rows, Eigen::Index cols) const {
    const auto v = array(k, static_cast<std::size_t>(rows * cols));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
    return m;
  }

  Vector vector(const std::string& k, Eigen::Index size) const {
    const auto v = array(k, static_cast<std::size_t>(size));
    return Eigen::Map<const Vector>(v.data(), size);
  }
};

std::string origin_note(const RunConfig& c, const std::string& key) {
  const auto it = c.origins.find(key);
  return it == c.origins.end() ? std::string() : " (set at " + it->second + ")";
}

std::vector<KRule> parse_rules(const RunConfig& c) {
  std::vector<KRule> rules;
  for (const auto& text : c.k_rules) {
    try {
      rules.push_back(KRule::parse(text));
    } catch (const InputError& e) {
      throw InputError(std::string(e.what()) + origin_note(c, "k_rule"));
    }
  }
  return rules;
}

bool is_gaussian_pair(const MeasurePair& p) {
  return std::holds_alternative<GaussianSpec>(p.mu) && std::holds_alternative<GaussianSpec>(p.nu);
}

MeasurePair build_measures(const RunConfig& c) {
  if (c.inline_measures) return *c.inline_measures;
  Rng rng = derive_rng(*c.seed, {kPresetKey});
  return preset_pair(c.preset, c.d, rng);
}

std::pair<DiscreteMeasure, DiscreteMeasure> discrete_measures(const RunConfig& c) {
  if (c.inline_measures) {
    const auto* a = std::get_if<DiscreteMeasure>(&c.inline_measures->mu);
    const auto* b = std::get_if<DiscreteMeasure>(&c.inline_measures->nu);
    if (!a || !b) throw InputError("kl-gap needs discrete [mu] and [nu] measures");
    return {*a, *b};
  }
  return {circle_measure(c.atoms, false), circle_measure(c.atoms, c.ramp)};
}

RunOptions run_options(const RunConfig& c) {
  RunOptions r;
  r.reps = c.reps;
  r.n_eval = c.n_eval;
  r.seed = *c.seed;
  r.threads = resolve_threads(c.threads);
  r.solver.tol = c.tol;
  r.solver.max_iter = c.max_iter;
  r.mala.step = c.mala_step;
  r.mala.iters = c.mala_iters;
  r.failure_budget = c.failure_budget;
  r.bootstrap_resamples = c.bootstrap_resamples;
  return r;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

void write_outputs(const std::filesystem::path& dir, const std::string& stem, const ExperimentResult& result) {
  auto rec = open_out(dir / (stem + "_records.csv"));
  write_records_csv(rec, result.records);
  auto sum = open_out(dir / (stem + "_summary.csv"));
  write_summary_csv(sum, result);
}

// Prints one line per series; returns false if any threshold fails.
bool report_slopes(const RunConfig& c, const ExperimentResult& result, std::ostream& out) {
  bool ok = true;
  const bool checked = c.slope_min || c.slope_max;
  for (const auto& s : result.series) {
    out << "slope " << s.metric << " eps=" << fmt(s.epsilon) << ": ";
    if (s.fit.degenerate) {
      out << "undefined (degenerate)";
      if (checked) {
        out << " [FAIL]";
        ok = false;
      }
      out << '\n';
      continue;
    }
    out << fmt(s.fit.slope) << " +- " << fmt(s.fit.std_error);
    if (checked) {
      const bool pass = (!c.slope_min || s.fit.slope >= *c.slope_min) && (!c.slope_max || s.fit.slope <= *c.slope_max);
      out << (pass ? " [PASS]" : " [FAIL]");
      ok = ok && pass;
    }
    out << '\n';
  }
  return ok;
}

std::string eps_tag(double eps) {
  std::string t = fmt(eps, "%g");
  std::replace(t.begin(), t.end(), '.', 'p');
  return t;
}

bool run_rate(const RunConfig& c, const MeasurePair& measures, const std::filesystem::path& dir,
              std::ostream& out) {
  RateOptions opts;
  opts.run = run_options(c);
  opts.sweep = c.sweep;
  opts.k_rules = parse_rules(c);
  opts.oracle_factor = c.oracle_factor;
  opts.shuffle = c.shuffle;
  if (c.reference == "closed-form" || (c.reference == "auto" && is_gaussian_pair(measures))) {
    if (!is_gaussian_pair(measures)) throw InputError("closed-form reference needs a Gaussian pair");
    opts.reference = Reference::closed_form;
  } else {
    opts.reference = Reference::large_n_oracle;
  }
  ExperimentResult all;
  all.experiment = "rate";
  bool ok = true;
  for (const double eps : c.epsilons) {
    ExperimentResult r = rate_experiment(measures, eps, opts);
    ok = report_slopes(c, r, out) && ok;
    auto svg = open_out(dir / ("rate_eps" + eps_tag(eps) + ".svg"));
    write_svg_plot(svg, r, "map error, eps = " + fmt(eps, "%g"), "n", "squared L2 error");
    all.records.insert(all.records.end(), r.records.begin(), r.records.end());
    all.series.insert(all.series.end(), r.series.begin(), r.series.end());
    all.failures += r.failures;
    all.attempts += r.attempts;
  }
  write_outputs(dir, "rate", all);
  out << "records: " << all.records.size() << " (" << all.failures << " failed solves)\n";
  return ok;
}

bool run_variance(const RunConfig& c, const MeasurePair& measures, const std::filesystem::path& dir,
                  std::ostream& out) {
  VarianceOptions opts;
  opts.run = run_options(c);
  opts.sweep = c.sweep;
  opts.epsilons = c.epsilons;
  opts.mode = c.variance_mode == "fixed-n" ? VarianceSweep::fixed_n : VarianceSweep::fixed_k;
  opts.k = parse_rules(c).front().fixed;
  opts.n = c.n;
  ExperimentResult r = variance_experiment(measures, opts);
  write_outputs(dir, "variance", r);
  auto svg = open_out(dir / "variance.svg");
  write_svg_plot(svg, r, "variance term", "m", "variance");
  bool ok = report_slopes(c, r, out);
  if (c.variance_bound) {
    Rng rng = derive_rng(opts.run.seed, {kBoundKey});
    const double tr = trace_covariance(measures.nu, rng, 20000, opts.run.mala);
    for (const auto& s : r.series) {
      for (std::size_t i = 0; i < s.sweep.size(); ++i) {
        const auto m = static_cast<std::size_t>(s.sweep[i]);
        const std::size_t k = opts.mode == VarianceSweep::fixed_k ? opts.k : opts.n / m;
        const double bound = tr / static_cast<double>(k);
        const bool pass = s.mean[i] <= bound + 3.0 * s.std_error[i];
        out << "bound m=" << m << " eps=" << fmt(s.epsilon) << ": variance " << fmt(s.mean[i]) << " <= "
            << fmt(bound) << " + 3*" << fmt(s.std_error[i]) << (pass ? " [PASS]" : " [FAIL]") << '\n';
        ok = ok && pass;
      }
    }
  }
  return ok;
}

bool run_kl_gap(const RunConfig& c, const std::filesystem::path& dir, std::ostream& out) {
  const auto [mu, nu] = discrete_measures(c);
  KlGapOptions opts;
  opts.run = run_options(c);
  ExperimentResult r;
  r.experiment = "kl-gap";
  auto plans = open_out(dir / "kl_gap_plans.csv");
  plans << "epsilon,m,i,j,pooled,exact\n";
  bool ok = true;
  for (const double eps : c.epsilons) {
    for (const std::size_t m : c.m) {
      opts.m = m;
      const KlGapReport rep = kl_gap_check(mu, nu, eps, opts);
      const double sv = static_cast<double>(m);
      for (const auto& [metric, value] : std::vector<std::pair<std::string, double>>{
               {"lhs", rep.lhs}, {"rhs", rep.rhs}, {"rhs_stderr", rep.rhs_stderr}, {"marginal_gap", rep.marginal_gap}}) {
        r.records.push_back({"kl-gap", sv, eps, mu.dim(), 0, metric, value});
      }
      r.failures += rep.failures;
      r.attempts += c.reps;
      for (Eigen::Index i = 0; i < rep.exact.rows(); ++i)
        for (Eigen::Index j = 0; j < rep.exact.cols(); ++j)
          plans << exact(eps) << ',' << m << ',' << i << ',' << j << ',' << exact(rep.pooled(i, j)) << ','
                << exact(rep.exact(i, j)) << '\n';
      const bool kl_ok = rep.lhs <= rep.rhs + 3.0 * rep.rhs_stderr;
      const bool gap_ok = !c.gap_max || rep.marginal_gap <= *c.gap_max;
      out << "kl-gap eps=" << fmt(eps) << " m=" << m << ": lhs " << fmt(rep.lhs, "%.4e") << " <= rhs "
          << fmt(rep.rhs, "%.4e") << " + 3*" << fmt(rep.rhs_stderr, "%.2e") << (kl_ok ? " [PASS]" : " [FAIL]")
          << "; marginal gap " << fmt(rep.marginal_gap, "%.3e");
      if (c.gap_max) out << (gap_ok ? " [PASS]" : " [FAIL]");
      out << '\n';
      ok = ok && kl_ok && gap_ok;
    }
  }
  r.series = summarize(r.records, c.bootstrap_resamples, *c.seed);
  write_outputs(dir, "kl_gap", r);
  auto svg = open_out(dir / "kl_gap.svg");
  write_svg_plot(svg, r, "KL gap", "m", "value");
  return ok;
}

bool run_map_eval(const RunConfig& c, const MeasurePair& measures, const std::filesystem::path& dir,
                  std::ostream& out) {
  const RunOptions run = run_options(c);
  const std::size_t n = c.n ? c.n : c.sweep.front();
  const KRule rule = parse_rules(c).front();
  const std::size_t k = rule.k_for(n);
  Rng rng = derive_rng(run.seed, {kMapEvalKey, n});
  const PointCloud X = sample(measures.mu, n, rng, run.mala);
  const PointCloud Y = sample(measures.nu, n, rng, run.mala);
  const Matrix eval = sample(measures.mu, run.n_eval, rng, run.mala).points();
  const Eigen::Index d = X.dim();
  const bool gaussian = is_gaussian_pair(measures);

  auto pts = open_out(dir / "map_eval_points.csv");
  pts << "epsilon,index";
  for (Eigen::Index j = 0; j < d; ++j) pts << ",x" << j;
  for (Eigen::Index j = 0; j < d; ++j) pts << ",t" << j;
  if (gaussian)
    for (Eigen::Index j = 0; j < d; ++j) pts << ",ref" << j;
  pts << '\n';

  ExperimentResult r;
  r.experiment = "map-eval";
  for (const double eps : c.epsilons) {
    EstimatorConfig cfg;
    cfg.epsilon = eps;
    cfg.k = k;
    cfg.seed = run.seed;
    cfg.solver = run.solver;
    cfg.solver.record_trace = c.dump_potentials;
    const BatchedMap est(X, Y, cfg);
    const Matrix t = est.evaluate(eval);
    Matrix ref;
    if (gaussian) {
      const auto& g0 = std::get<GaussianSpec>(measures.mu);
      const auto& g1 = std::get<GaussianSpec>(measures.nu);
      ref = GaussianEntropicMap(g0.mean, g0.covariance, g1.mean, g1.covariance, eps).apply(eval);
      const double err = mc_map_error(t, ref, 2);
      r.records.push_back({"map-eval", static_cast<double>(n), eps, d, 0, "sq_l2_" + rule.label(), err});
      out << "map-eval eps=" << fmt(eps) << " n=" << n << " k=" << k << ": squared L2 error " << fmt(err, "%.4e")
          << '\n';
    } else {
      out << "map-eval eps=" << fmt(eps) << " n=" << n << " k=" << k << ": evaluated " << eval.rows()
          << " points\n";
    }
    for (Eigen::Index i = 0; i < eval.rows(); ++i) {
      pts << exact(eps) << ',' << i;
      for (Eigen::Index j = 0; j < d; ++j) pts << ',' << exact(eval(i, j));
      for (Eigen::Index j = 0; j < d; ++j) pts << ',' << exact(t(i, j));
      if (gaussian)
        for (Eigen::Index j = 0; j < d; ++j) pts << ',' << exact(ref(i, j));
      pts << '\n';
    }
    if (c.dump_potentials) {
      const DualPotentials& pot = est.batch(0).base();
      auto pf = open_out(dir / ("potentials_eps" + eps_tag(eps) + ".csv"));
      write_potentials_csv(pf, pot);
      auto tf = open_out(dir / ("residuals_eps" + eps_tag(eps) + ".csv"));
      write_residual_trace_csv(tf, pot);
    }
  }
  r.series = summarize(r.records, c.bootstrap_resamples, *c.seed);
  write_outputs(dir, "map_eval", r);
  return true;
}

void set_origin(RunConfig& c, const ConfigFile& f, const std::string& key, const std::string& name) {
  c.origins[name] = f.source() + ":" + std::to_string(f.line_of(key));
}

}  // namespace

void write_measure_section(std::ostream& out, const std::string& section, const MeasureSpec& spec) {
  out << '[' << section << "]\n";
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        out << "dim = " << m.dim() << '\n';
        if constexpr (std::is_same_v<T, GaussianSpec>) {
          out << "family = \"gaussian\"\n";
          write_array(out, "mean", m.mean);
          write_array(out, "covariance", flat(m.covariance.matrix()));
        } else if constexpr (std::is_same_v<T, GmmSpec>) {
          out << "family = \"gmm\"\n";
          write_array(out, "weights", m.weights);
          std::vector<double> means, covs;
          for (const auto& g : m.components) {
            means.insert(means.end(), g.mean.data(), g.mean.data() + g.mean.size());
            const auto cv = flat(g.covariance.matrix());
            covs.insert(covs.end(), cv.begin(), cv.end());
          }
          write_array(out, "means", means);
          write_array(out, "covariances", covs);
        } else if constexpr (std::is_same_v<T, LogConcaveSpec>) {
          out << "family = \"logconcave\"\n";
          out << "c = " << exact(m.c) << '\n';
          write_array(out, "slopes", flat(m.slopes));
          write_array(out, "intercepts", m.intercepts);
        } else {
          out << "family = \"discrete\"\n";
          write_array(out, "atoms", flat(m.atoms));
          write_array(out, "weights", m.weights);
        }
      },
      spec);
}

MeasureSpec read_measure_section(const ConfigFile& file, const std::string& section) {
  const SectionReader r{file, section};
  if (!file.has(r.key("family"))) r.fail("family", "missing 'family'");
  if (!file.has(r.key("dim"))) r.fail("dim", "missing 'dim'");
  const std::string family = file.string(r.key("family"));
  const auto d = static_cast<Eigen::Index>(file.count(r.key("dim")));
  if (d < 1) r.fail("dim", "'dim' must be at least 1");
  try {
    if (family == "gaussian") return GaussianSpec(r.vector("mean", d), SpdMatrix(r.matrix("covariance", d, d)));
    if (family == "gmm") {
      const auto wkey = r.key("weights");
      if (!file.has(wkey)) r.fail("weights", "missing 'weights'");
      const auto w = file.numbers(wkey);
      const auto K = static_cast<Eigen::Index>(w.size());
      const Matrix means = r.matrix("means", K, d);
      const Matrix covs = r.matrix("covariances", K * d, d);
      std::vector<GaussianSpec> comps;
      for (Eigen::Index c = 0; c < K; ++c) comps.emplace_back(Vector(means.row(c).transpose()), SpdMatrix(covs.middleRows(c * d, d)));
      return GmmSpec(Eigen::Map<const Vector>(w.data(), K), std::move(comps));
    }
    if (family == "logconcave") {
      const auto ikey = r.key("intercepts");
      if (!file.has(ikey)) r.fail("intercepts", "missing 'intercepts'");
      const auto b = file.numbers(ikey);
      const auto l = static_cast<Eigen::Index>(b.size());
      if (!file.has(r.key("c"))) r.fail("c", "missing 'c'");
      return LogConcaveSpec(file.number(r.key("c")), r.matrix("slopes", l, d), Eigen::Map<const Vector>(b.data(), l));
    }
    if (family == "discrete") {
      const auto wkey = r.key("weights");
      if (!file.has(wkey)) r.fail("weights", "missing 'weights'");
      const auto w = file.numbers(wkey);
      const auto p = static_cast<Eigen::Index>(w.size());
      return DiscreteMeasure(r.matrix("atoms", p, d), Eigen::Map<const Vector>(w.data(), p));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    r.fail("family", e.what());
  }
  r.fail("family", "unknown family '" + family + "'");
}

RunConfig apply_config(const ConfigFile& f, RunConfig c) {
  std::vector<std::string> known{"experiment", "preset",       "d",       "eps",       "sweep",          "k_rule",
                                 "reps",       "n_eval",       "seed",    "out",       "threads",        "reference",
                                 "oracle_factor", "shuffle",   "variance_mode", "n", "variance_bound", "atoms",
                                 "ramp",       "m",            "dump_potentials", "solver.tol", "solver.max_iter",
                                 "mala.step",  "mala.iters",   "run.failure_budget", "run.bootstrap_resamples",
                                 "thresholds.slope_min", "thresholds.slope_max", "thresholds.gap_max"};
  for (const std::string sec : {"mu", "nu"})
    for (const std::string k :
         {"family", "dim", "mean", "covariance", "weights", "means", "covariances", "c", "slopes", "intercepts", "atoms"})
      known.push_back(sec + "." + k);
  f.reject_unknown(known);

  const auto set = [&](const std::string& key, const std::string& name, auto&& apply) {
    if (!f.has(key)) return;
    apply();
    set_origin(c, f, key, name);
  };
  set("experiment", "experiment", [&] { c.experiment = f.string("experiment"); });
  set("preset", "preset", [&] { c.preset = f.string("preset"); });
  set("d", "d", [&] { c.d = static_cast<Eigen::Index>(count_value(f, "d")); });
  set("eps", "eps", [&] { c.epsilons = f.numbers("eps"); });
  set("sweep", "sweep", [&] { c.sweep = counts_value(f, "sweep"); });
  set("k_rule", "k_rule", [&] { c.k_rules = f.strings("k_rule"); });
  set("reps", "reps", [&] { c.reps = count_value(f, "reps"); });
  set("n_eval", "n_eval", [&] { c.n_eval = count_value(f, "n_eval"); });
  set("seed", "seed", [&] {
    const auto& v = f.at("seed");
    try {
      c.seed = parse_count(v.kind == ConfigValue::Kind::number ? v.text : std::string("?"), "seed");
    } catch (const InputError&) {
      throw ConfigError(f.source(), v.line, "'seed' must be a nonnegative 64-bit integer");
    }
  });
  set("out", "out", [&] { c.out_dir = f.string("out"); });
  set("threads", "threads", [&] { c.threads = count_value(f, "threads"); });
  set("reference", "reference", [&] { c.reference = f.string("reference"); });
  set("oracle_factor", "oracle_factor", [&] { c.oracle_factor = count_value(f, "oracle_factor"); });
  set("shuffle", "shuffle", [&] { c.shuffle = f.boolean("shuffle"); });
  set("variance_mode", "variance_mode", [&] { c.variance_mode = f.string("variance_mode"); });
  set("n", "n", [&] { c.n = count_value(f, "n"); });
  set("variance_bound", "variance_bound", [&] { c.variance_bound = f.boolean("variance_bound"); });
  set("atoms", "atoms", [&] { c.atoms = count_value(f, "atoms"); });
  set("ramp", "ramp", [&] { c.ramp = f.boolean("ramp"); });
  set("m", "m", [&] { c.m = counts_value(f, "m"); });
  set("dump_potentials", "dump_potentials", [&] { c.dump_potentials = f.boolean("dump_potentials"); });
  set("solver.tol", "tol", [&] { c.tol = f.number("solver.tol"); });
  set("solver.max_iter", "max_iter", [&] { c.max_iter = count_value(f, "solver.max_iter"); });
  set("mala.step", "mala_step", [&] { c.mala_step = f.number("mala.step"); });
  set("mala.iters", "mala_iters", [&] { c.mala_iters = count_value(f, "mala.iters"); });
  set("run.failure_budget", "failure_budget", [&] { c.failure_budget = f.number("run.failure_budget"); });
  set("run.bootstrap_resamples", "bootstrap_resamples",
      [&] { c.bootstrap_resamples = count_value(f, "run.bootstrap_resamples"); });
  set("thresholds.slope_min", "slope_min", [&] { c.slope_min = f.number("thresholds.slope_min"); });
  set("thresholds.slope_max", "slope_max", [&] { c.slope_max = f.number("thresholds.slope_max"); });
  set("thresholds.gap_max", "gap_max", [&] { c.gap_max = f.number("thresholds.gap_max"); });

  const bool has_mu = f.has("mu.family") || f.has("mu.dim");
  const bool has_nu = f.has("nu.family") || f.has("nu.dim");
  if (has_mu || has_nu) {
    if (!has_mu || !has_nu) {
      const std::string k = has_mu ? "mu.family" : "nu.family";
      throw ConfigError(f.source(), f.has(k) ? f.line_of(k) : 0, "inline measures need both [mu] and [nu]");
    }
    c.inline_measures = MeasurePair{read_measure_section(f, "mu"), read_measure_section(f, "nu")};
  }
  return c;
}

void validate(const RunConfig& c) {
  const auto fail = [&](const std::string& key, const std::string& message) {
    throw InputError(message + origin_note(c, key));
  };
  if (std::find(kExperiments.begin(), kExperiments.end(), c.experiment) == kExperiments.end())
    fail("experiment", "unknown experiment '" + c.experiment + "' (rate, variance, kl-gap, map-eval)");
  if (!c.seed) throw InputError("a seed is required (--seed or 'seed' in the config file)");
  if (c.epsilons.empty()) fail("eps", "at least one epsilon is required");
  for (const double e : c.epsilons)
    if (!(e > 0.0)) fail("eps", "epsilon must be positive, got " + fmt(e, "%g"));
  if (c.reps < 1) fail("reps", "reps must be at least 1");
  if (c.n_eval < 1) fail("n_eval", "n_eval must be at least 1");
  if (!(c.tol > 0.0)) fail("tol", "solver tolerance must be positive");
  if (c.max_iter < 1) fail("max_iter", "max_iter must be at least 1");
  if (!(c.mala_step > 0.0)) fail("mala_step", "MALA step must be positive");
  if (!(c.failure_budget >= 0.0 && c.failure_budget <= 1.0)) fail("failure_budget", "failure budget must lie in [0, 1]");
  if (c.bootstrap_resamples < 1) fail("bootstrap_resamples", "bootstrap_resamples must be at least 1");
  if (c.k_rules.empty()) fail("k_rule", "at least one k rule is required");
  const auto rules = parse_rules(c);

  if (c.experiment != "kl-gap") {
    if (!c.inline_measures) {
      if (c.preset.empty()) fail("preset", "a measure preset (--preset) or inline [mu]/[nu] specs are required");
      const PresetInfo& info = preset_info(c.preset);
      if (info.fixed_dim != 0 && c.d != 0 && c.d != info.fixed_dim)
        fail("d", "preset " + c.preset + " has fixed dimension " + std::to_string(info.fixed_dim));
    } else if (dimension(c.inline_measures->mu) != dimension(c.inline_measures->nu)) {
      throw InputError("inline [mu] and [nu] have different dimensions");
    }
  }

  if (c.experiment == "rate") {
    if (c.reference != "auto" && c.reference != "closed-form" && c.reference != "oracle")
      fail("reference", "reference must be auto, closed-form or oracle");
    if (c.oracle_factor < 1) fail("oracle_factor", "oracle_factor must be at least 1");
    for (const auto n : c.sweep)
      if (n < 1) fail("sweep", "sweep values must be positive integers");
    try {
      validate_sweep(c.sweep, rules);
    } catch (const InputError& e) {
      fail(c.origins.count("sweep") ? "sweep" : "k_rule", e.what());
    }
  } else if (c.experiment == "variance") {
    if (c.reps < 2) fail("reps", "the variance experiment needs at least 2 replications");
    if (c.sweep.empty()) fail("sweep", "sweep must list at least one batch size");
    for (const auto m : c.sweep)
      if (m < 1) fail("sweep", "batch sizes must be positive integers");
    if (c.variance_mode == "fixed-k") {
      if (rules.size() != 1 || rules.front().cube_root) fail("k_rule", "the variance experiment takes one fixed k");
    } else if (c.variance_mode == "fixed-n") {
      for (const auto m : c.sweep)
        if (c.n < 1 || c.n % m != 0)
          fail("n", "sample size n = " + std::to_string(c.n) + " is not divisible by m = " + std::to_string(m));
    } else {
      fail("variance_mode", "variance_mode must be fixed-k or fixed-n");
    }
  } else if (c.experiment == "kl-gap") {
    if (c.reps < 200) fail("reps", "kl-gap needs at least 200 replications");
    if (c.m.empty()) fail("m", "at least one m is required");
    for (const auto m : c.m)
      if (m < 1 || m > 64) fail("m", "m must lie in [1, 64], got " + std::to_string(m));
    if (!c.inline_measures && (c.atoms < 1 || c.atoms > 16)) fail("atoms", "atoms must lie in [1, 16]");
  } else {
    const std::size_t n = c.n ? c.n : (c.sweep.empty() ? 0 : c.sweep.front());
    if (n < 1) fail("n", "map-eval needs a sample size (--n)");
    const std::size_t k = rules.front().k_for(n);
    if (n % k != 0) fail("n", "sample size " + std::to_string(n) + " is not divisible by k = " + std::to_string(k));
  }
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    validate(config);
    const std::filesystem::path dir(config.out_dir);
    std::filesystem::create_directories(dir);
    bool ok = true;
    if (config.experiment == "kl-gap") {
      ok = run_kl_gap(config, dir, out);
    } else {
      const MeasurePair measures = build_measures(config);
      if (dimension(measures.mu) != dimension(measures.nu))
        throw InputError("source and target dimensions differ");
      {
        auto mf = open_out(dir / "measures.toml");
        write_measure_section(mf, "mu", measures.mu);
        mf << '\n';
        write_measure_section(mf, "nu", measures.nu);
      }
      if (config.experiment == "rate") ok = run_rate(config, measures, dir, out);
      if (config.experiment == "variance") ok = run_variance(config, measures, dir, out);
      if (config.experiment == "map-eval") ok = run_map_eval(config, measures, dir, out);
    }
    out << (ok ? "result: PASS\n" : "result: FAIL\n");
    return ok ? kExitOk : kExitThresholdFailed;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const ExperimentFailure& e) {
    err << "error: " << e.what() << '\n';
    return kExitBudgetExceeded;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBudgetExceeded;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternalError;
  }
}

void list_presets(std::ostream& out) {
  for (const auto& p : preset_catalog()) {
    out << p.name << (p.randomized ? "  [seeded]" : "") << "\n    " << p.provenance << '\n';
  }
}

int cli_main(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args = raw_args;
  std::string positional_experiment;
  const bool via_run = !args.empty() && args.front() == "run";
  if (via_run) {
    args.erase(args.begin());
    if (!args.empty() && args.front().rfind("-", 0) != 0) {
      positional_experiment = args.front();
      args.erase(args.begin());
    }
  }

  CLI::App app{"Entropic optimal transport map estimation and experiments", "entmap"};
  app.require_subcommand(0, 1);
  CLI::App* presets = app.add_subcommand("presets", "List the shipped measure presets");

  // Options shared by the experiment subcommands, stored as raw text and
  // applied after the config file so that flags win.
  struct FlagSpec {
    const char* name;
    const char* help;
    bool is_switch;
  };
  static const FlagSpec kFlags[] = {
      {"--config", "TOML-style config file", false},
      {"--preset", "measure preset name", false},
      {"--d", "dimension for presets without a fixed one", false},
      {"--eps", "comma-separated epsilon list", false},
      {"--sweep", "comma-separated sample sizes (rate) or batch sizes (variance)", false},
      {"--k-rule", "comma-separated k rules: integers or cbrt", false},
      {"--reps", "replications", false},
      {"--n-eval", "evaluation points", false},
      {"--seed", "master seed (required)", false},
      {"--out", "output directory", false},
      {"--threads", "worker threads (default: ENTMAP_THREADS or all cores)", false},
      {"--reference", "rate reference map: auto, closed-form or oracle", false},
      {"--oracle-factor", "oracle sample size as a multiple of the largest n", false},
      {"--no-shuffle", "keep sample order when forming batches", true},
      {"--mode", "variance sweep mode: fixed-k or fixed-n", false},
      {"--n", "total sample size (variance fixed-n, map-eval)", false},
      {"--no-bound", "skip the trace-covariance bound check", true},
      {"--atoms", "atoms per circle measure (kl-gap)", false},
      {"--ramp", "use ramped weights for the target circle measure", true},
      {"--m", "comma-separated sample sizes for kl-gap", false},
      {"--tol", "solver tolerance on the marginal residual", false},
      {"--max-iter", "solver iteration cap", false},
      {"--mala-step", "MALA step size", false},
      {"--mala-iters", "MALA iterations per chain", false},
      {"--failure-budget", "largest tolerated fraction of failed solves", false},
      {"--bootstrap", "bootstrap resamples", false},
      {"--slope-min", "lowest accepted fitted slope", false},
      {"--slope-max", "highest accepted fitted slope", false},
      {"--gap-max", "largest accepted kl-gap marginal deviation", false},
      {"--dump-potentials", "write dual potentials and residual traces (map-eval)", true},
  };
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::vector<std::pair<std::string, CLI::App*>> subs;
  const auto add_experiment = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    for (const auto& spec : kFlags) {
      if (spec.is_switch) {
        sub->add_flag(spec.name, switches[spec.name], spec.help);
      } else {
        sub->add_option(spec.name, values[spec.name], spec.help);
      }
    }
    subs.emplace_back(name, sub);
    return sub;
  };
  add_experiment("rate", "map-error curves over sample sizes");
  add_experiment("variance", "variance-term curves over batch sizes");
  add_experiment("kl-gap", "KL gap of the averaged sample coupling");
  add_experiment("map-eval", "evaluate the batched estimator at sample points");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (via_run) {
    std::string exp = positional_experiment;
    if (exp.empty()) {
      // Experiment comes from the config file; parse under the rate
      // subcommand's option set and resolve later.
      exp = "rate";
    }
    if (std::none_of(subs.begin(), subs.end(), [&](const auto& s) { return s.first == exp; })) {
      err << "error: unknown experiment '" << exp << "' (rate, variance, kl-gap, map-eval)\n";
      return kExitConfigError;
    }
    reversed.push_back(exp);
  }
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }

  if (presets->parsed()) {
    list_presets(out);
    return kExitOk;
  }
  const auto parsed = std::find_if(subs.begin(), subs.end(), [](const auto& s) { return s.second->parsed(); });
  if (parsed == subs.end()) {
    out << app.help();
    return kExitConfigError;
  }
  CLI::App* sub = parsed->second;
  const auto given = [&](const std::string& name) { return sub->get_option(name)->count() > 0; };

  RunConfig config;
  try {
    if (given("--config")) {
      config = apply_config(ConfigFile::load(values["--config"]), config);
    }
    if (!(via_run && positional_experiment.empty() && !config.experiment.empty())) config.experiment = parsed->first;
    const auto text = [&](const char* name) { return values[name]; };
    if (given("--preset")) config.preset = text("--preset");
    if (given("--d")) config.d = static_cast<Eigen::Index>(parse_count(text("--d"), "--d"));
    if (given("--eps")) config.epsilons = parse_reals(text("--eps"), "--eps");
    if (given("--sweep")) config.sweep = parse_counts(text("--sweep"), "--sweep");
    if (given("--k-rule")) config.k_rules = split_list(text("--k-rule"));
    if (given("--reps")) config.reps = parse_count(text("--reps"), "--reps");
    if (given("--n-eval")) config.n_eval = parse_count(text("--n-eval"), "--n-eval");
    if (given("--seed")) config.seed = parse_count(text("--seed"), "--seed");
    if (given("--out")) config.out_dir = text("--out");
    if (given("--threads")) config.threads = parse_count(text("--threads"), "--threads");
    if (given("--reference")) config.reference = text("--reference");
    if (given("--oracle-factor")) config.oracle_factor = parse_count(text("--oracle-factor"), "--oracle-factor");
    if (switches["--no-shuffle"]) config.shuffle = false;
    if (given("--mode")) config.variance_mode = text("--mode");
    if (given("--n")) config.n = parse_count(text("--n"), "--n");
    if (switches["--no-bound"]) config.variance_bound = false;
    if (given("--atoms")) config.atoms = parse_count(text("--atoms"), "--atoms");
    if (switches["--ramp"]) config.ramp = true;
    if (given("--m")) config.m = parse_counts(text("--m"), "--m");
    if (given("--tol")) config.tol = parse_real(text("--tol"), "--tol");
    if (given("--max-iter")) config.max_iter = parse_count(text("--max-iter"), "--max-iter");
    if (given("--mala-step")) config.mala_step = parse_real(text("--mala-step"), "--mala-step");
    if (given("--mala-iters")) config.mala_iters = parse_count(text("--mala-iters"), "--mala-iters");
    if (given("--failure-budget")) config.failure_budget = parse_real(text("--failure-budget"), "--failure-budget");
    if (given("--bootstrap")) config.bootstrap_resamples = parse_count(text("--bootstrap"), "--bootstrap");
    if (given("--slope-min")) config.slope_min = parse_real(text("--slope-min"), "--slope-min");
    if (given("--slope-max")) config.slope_max = parse_real(text("--slope-max"), "--slope-max");
    if (given("--gap-max")) config.gap_max = parse_real(text("--gap-max"), "--gap-max");
    if (switches["--dump-potentials"]) config.dump_potentials = true;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  return run(config, out, err);
}

}  // namespace entmap
