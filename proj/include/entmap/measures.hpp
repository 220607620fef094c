#ifndef ENTMAP_MEASURES_HPP_
#define ENTMAP_MEASURES_HPP_

#include "entmap/core.hpp"

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace entmap {

using Rng = std::mt19937_64;

struct GaussianSpec {
  Vector mean;
  SpdMatrix covariance;

  GaussianSpec(Vector mean, SpdMatrix covariance);
  Eigen::Index dim() const { return mean.size(); }
};

struct GmmSpec {
  Vector weights;
  std::vector<GaussianSpec> components;

  GmmSpec(Vector weights, std::vector<GaussianSpec> components);
  Eigen::Index dim() const { return components.front().dim(); }
};

/// Density proportional to exp(-c ||x||^2 / 2 + max_i (u_i . x + b_i)).
/// With no pieces the max-affine term is taken to be 0.
struct LogConcaveSpec {
  double c;
  Matrix slopes;      // l x d
  Vector intercepts;  // l

  LogConcaveSpec(double c, Matrix slopes, Vector intercepts);
  /// Pure quadratic part (no affine pieces) in dimension d.
  LogConcaveSpec(double c, Eigen::Index d);
  Eigen::Index dim() const { return slopes.cols(); }
  Eigen::Index pieces() const { return slopes.rows(); }
};

struct DiscreteMeasure {
  Matrix atoms;  // p x d
  Vector weights;

  DiscreteMeasure(Matrix atoms, Vector weights);
  Eigen::Index dim() const { return atoms.cols(); }
  Eigen::Index size() const { return atoms.rows(); }
  PointCloud cloud() const { return PointCloud(atoms, weights); }
};

using MeasureSpec = std::variant<GaussianSpec, GmmSpec, LogConcaveSpec, DiscreteMeasure>;

struct MalaOptions {
  double step = 0.01;
  std::size_t iters = 500;
};

struct MalaStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double acceptance_rate() const { return proposals == 0 ? 0.0 : static_cast<double>(accepted) / proposals; }
};

Eigen::Index dimension(const MeasureSpec& spec);

/// n i.i.d. draws. Gaussian draws are mean + L z with L the symmetric square
/// root of the covariance; mixtures pick a component first.
PointCloud sample(const GaussianSpec& spec, std::size_t n, Rng& rng);
PointCloud sample(const GmmSpec& spec, std::size_t n, Rng& rng);
PointCloud sample(const DiscreteMeasure& spec, std::size_t n, Rng& rng);
/// Log-concave specs are sampled with `mala_sample`.
PointCloud sample(const MeasureSpec& spec, std::size_t n, Rng& rng, const MalaOptions& mala = {});

/// Mixture draws together with the component index of each draw.
std::pair<PointCloud, std::vector<std::size_t>> sample_with_labels(const GmmSpec& spec, std::size_t n, Rng& rng);

/// Atom indices of n draws from a discrete measure.
std::vector<std::size_t> sample_indices(const DiscreteMeasure& spec, std::size_t n, Rng& rng);

/// Unnormalised log-density and its gradient. The gradient uses the
/// lowest-index maximising piece.
std::pair<double, Vector> log_density_grad(const LogConcaveSpec& spec, const Vector& x);

/// Mean of the MALA proposal from x: x + step * grad log p(x).
Vector mala_proposal_mean(const LogConcaveSpec& spec, const Vector& x, double step);

/// Metropolis-Hastings acceptance probability for a move x -> y with
/// proposal N(x + step grad, 2 step I).
double mala_acceptance(const LogConcaveSpec& spec, const Vector& x, const Vector& y, double step);

/// n independent chains from the origin, `iters` MALA steps each; returns
/// the final states.
PointCloud mala_sample(const LogConcaveSpec& spec, std::size_t n, double step, std::size_t iters, Rng& rng,
                       MalaStats* stats = nullptr);

/// E||Y - EY||^2. Closed form except for log-concave specs, where it is a
/// Monte Carlo estimate from `mc_samples` MALA draws.
double trace_covariance(const MeasureSpec& spec, Rng& rng, std::size_t mc_samples = 20000,
                        const MalaOptions& mala = {});

/// Random symmetric matrix U D U^T with U Haar-distributed.
SpdMatrix random_covariance(Eigen::Index d, double eig_lo, double eig_hi, Rng& rng);

enum class Family { gaussian, gmm, logconcave };

Family parse_family(const std::string& name);
std::string family_name(Family family);

struct MeasurePair {
  MeasureSpec mu;
  MeasureSpec nu;
};

/// Random source/target pair of the given family in dimension d:
///  gaussian   N(0, S), N(2 e1, S') with eigenvalues in [1/(10d), 1/d]
///  gmm        10 and 15 components, means N(0, I/d) and N(2 e1, I/d),
///             Dirichlet(1) weights, covariances (w/d) I with w ~ U[0, 1]
///  logconcave 4d pieces per measure, u ~ N(0, I), b ~ N(0, 1),
///             c = 1 and 0.75 scaled by 5/d
MeasurePair random_family_spec(Family family, Eigen::Index d, Rng& rng);

struct PresetInfo {
  std::string name;
  std::string provenance;
  /// True when the measures are redrawn from a seed on every use.
  bool randomized;
  /// Fixed dimension, or 0 when any d >= 1 is accepted.
  Eigen::Index fixed_dim;
};

const std::vector<PresetInfo>& preset_catalog();
const PresetInfo& preset_info(const std::string& name);

/// Measures of a named preset. Randomised presets draw from `rng`; `d` = 0
/// selects the preset's default dimension.
MeasurePair preset_pair(const std::string& name, Eigen::Index d, Rng& rng);

}  // namespace entmap

#endif  // ENTMAP_MEASURES_HPP_
