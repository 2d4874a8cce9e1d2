#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "exactloc/eloreta.hpp"
#include "exactloc/forward_model.hpp"
#include "exactloc/imaging.hpp"

namespace exactloc {

inline constexpr double kTieThreshold = 1e-9;
inline constexpr int kDepthBins = 4;

enum class MethodKind {
  min_norm,
  depth_weighted_mn,
  sloreta,
  sloreta_noise_matched,
  eloreta,
  adaptive,
};

MethodKind parse_method_kind(const std::string& text);
const char* to_string(MethodKind kind) noexcept;

/// How the adaptive method draws its training data: `n_samples` point-source
/// measurements at `source_voxel` with random moments plus `noise`.
struct AdaptiveTraining {
  AdaptiveVariant variant = AdaptiveVariant::inverse_covariance;
  Index n_samples = 0;  // 0 selects 50 * N_E
  Index source_voxel = 0;
  NoiseSpec noise{1.0, 1.0, NoiseMode::both, 7, std::nullopt};
};

struct MethodSpec {
  MethodKind kind = MethodKind::sloreta;
  /// Regularization; ignored when `use_default_alpha` is set.
  double alpha = 0.0;
  bool use_default_alpha = false;
  double depth_exponent = 1.0;
  double sigma_phi = 0.0;
  double sigma_j = 1.0;
  Orientation orientation = Orientation::free;
  ELoretaConfig eloreta{};
  AdaptiveTraining adaptive{};
  /// Optional display name; defaults to a label derived from the fields.
  std::string label;

  std::string name() const;
};

enum class MomentPolicyKind { canonical_axes, random, fixed, canonical_plus_random };

struct MomentPolicy {
  MomentPolicyKind kind = MomentPolicyKind::canonical_plus_random;
  std::uint64_t seed = 1;
  Index count = 5;
  VectorXd fixed;

  /// Moments for voxel j, each of size `block_size`.
  std::vector<VectorXd> moments_for(Index j, Index block_size) const;
};

enum class Evaluation { noiseless, expected_power, monte_carlo };

struct SweepConfig {
  MethodSpec method;
  MomentPolicy moments;
  NoiseSpec noise;
  Evaluation evaluation = Evaluation::noiseless;
  Index n_trials = 1;
  /// For Monte Carlo: draw biological noise with covariance sigma_j W^-1
  /// using the method's eLORETA weights.
  bool structured_biological_noise = false;

  void validate() const;
};

struct CaseRecord {
  Index true_voxel = 0;
  Index moment_id = 0;
  VectorXd moment;
  Index argmax_voxel = 0;
  double error_m = 0.0;
  bool tie = false;
  /// Monte Carlo only: argmax of every single-trial power map.
  std::vector<Index> trial_argmax;

  bool exact() const { return argmax_voxel == true_voxel && !tie; }
};

struct ReportAggregates {
  Index cases = 0;
  double max_error = 0.0;
  double mean_error = 0.0;
  double fraction_exact = 0.0;
  Index ties = 0;
  std::array<double, kDepthBins> bin_mean_error{};
  std::array<Index, kDepthBins> bin_cases{};
  /// Monte Carlo only: fraction of single trials whose argmax is the true voxel.
  std::optional<double> trial_fraction_exact;
};

struct LocalizationReport {
  std::string method;
  std::vector<CaseRecord> records;
  ReportAggregates aggregates;
  std::optional<FixedPointReport> solver;
  std::vector<std::string> warnings;
  /// Depth bin (0 innermost) of every voxel.
  std::vector<int> voxel_bins;

  /// Recomputes aggregates from the records.
  ReportAggregates recompute() const;
  std::string to_csv(bool with_header = true) const;
  std::string summary_json() const;
};

/// A method ready to be applied: its operator on the (possibly oriented)
/// gain plus, for family members, the parameter matrix C.
struct PreparedMethod {
  std::string name;
  LeadField gain;
  InverseOperator op;
  std::optional<FamilyParamC> c;
  std::optional<BlockWeights> weights;
  std::optional<FixedPointReport> solver;
  std::vector<std::string> warnings;
};

/// Builds the operator for `spec` from K (average-referenced for EEG).
/// Fixed orientation uses orient(K, sources).
PreparedMethod prepare_method(const LeadField& k, const SourceSpace& sources, const MethodSpec& spec);

/// Equal-width radial shells over [0, max ||r||], 0 innermost.
std::vector<int> depth_bins(const SourceSpace& sources, int bins = kDepthBins);

/// Argmax with lowest-index tie breaking; `tie` is set when another voxel
/// is within kTieThreshold (relative) of the maximum.
struct ArgmaxResult {
  Index index = 0;
  bool tie = false;
};
ArgmaxResult strict_argmax(const VectorXd& power);

/// Expected power per voxel for signal s and noise covariance N, using
/// tr[(s s^T + N) C K_i (K_i^T C K_i)^+ K_i^T C].
VectorXd expected_power_map(const LeadField& gain, const FamilyParamC& c, const VectorXd& signal,
                            const MatrixXd& noise_cov, const RankPolicy& policy = {});

/// Noise covariance the expected-power sweep pairs with `prepared`:
/// sigma_phi R + sigma_j K K^T, or sigma_j K W^-1 K^T for eLORETA.
MatrixXd sweep_noise_covariance(const PreparedMethod& prepared, double sigma_phi, double sigma_j);

/// Monte Carlo mean of ||T_i phi||^2 over n_trials noisy copies of `signal`;
/// also returns every trial's argmax.
struct MonteCarloPower {
  VectorXd mean_power;
  std::vector<Index> trial_argmax;
};
MonteCarloPower monte_carlo_power(const PreparedMethod& prepared, const VectorXd& signal,
                                  const NoiseSpec& noise, Index n_trials, Rng& rng);

LocalizationReport sweep_noiseless(const LeadField& k, const SourceSpace& sources,
                                   const SweepConfig& cfg);

LocalizationReport sweep_expected_power(const LeadField& k, const SourceSpace& sources,
                                        const SweepConfig& cfg, double sigma_phi, double sigma_j);

LocalizationReport sweep_monte_carlo(const LeadField& k, const SourceSpace& sources,
                                     const SweepConfig& cfg);

/// Dispatches on cfg.evaluation (expected power uses cfg.noise sigmas).
LocalizationReport run_sweep(const LeadField& k, const SourceSpace& sources, const SweepConfig& cfg);

/// Variants taking an already prepared method (avoids re-solving eLORETA).
LocalizationReport sweep_noiseless(const PreparedMethod& prepared, const SourceSpace& sources,
                                   const SweepConfig& cfg);
LocalizationReport sweep_expected_power(const PreparedMethod& prepared, const SourceSpace& sources,
                                        const SweepConfig& cfg, double sigma_phi, double sigma_j);
LocalizationReport sweep_monte_carlo(const PreparedMethod& prepared, const SourceSpace& sources,
                                     const SweepConfig& cfg);

struct ComparisonTable {
  std::vector<LocalizationReport> reports;

  std::string to_csv() const;
  std::string to_json() const;
};

ComparisonTable compare_methods(const LeadField& k, const SourceSpace& sources,
                                const std::vector<SweepConfig>& configs);

}  // namespace exactloc
