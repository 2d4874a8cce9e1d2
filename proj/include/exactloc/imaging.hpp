#pragma once

#include <optional>
#include <string>
#include <vector>

#include "exactloc/matrix_kernels.hpp"
#include "exactloc/types.hpp"

namespace exactloc {

enum class CProvenance {
  sloreta,
  adaptive_inverse_covariance,
  adaptive_squared_inverse_covariance,
  eloreta,
  custom,
};

const char* to_string(CProvenance p) noexcept;

/// Symmetric PSD parameter matrix C selecting one member of the
/// exact-localization family  j_i = (K_i^T C K_i)^{-1/2} K_i^T C phi.
struct FamilyParamC {
  MatrixXd matrix;
  CProvenance provenance = CProvenance::custom;
  double alpha = 0.0;
  Modality modality = Modality::eeg;
  /// Set when C is known to lose the exact-localization guarantee
  /// (e.g. adaptive C from too few samples).
  std::optional<std::string> warning;

  /// Symmetry (1e-12 relative) and, for EEG, C*1 = 0. Throws on violation.
  void validate() const;
  /// Number of eigenvalues retained under `policy`.
  Index rank(const RankPolicy& policy = kGramRankPolicy) const;
};

/// Per-voxel estimates stacked as block_size * N_V entries, plus the power
/// map ||j_i||^2.
struct VoxelEstimate {
  VectorXd j_hat;
  VectorXd power;
  Index block_size = 3;

  auto voxel(Index i) const { return j_hat.segment(i * block_size, block_size); }
};

enum class AdaptiveVariant { inverse_covariance, squared_inverse_covariance };

AdaptiveVariant parse_adaptive_variant(const std::string& text);
const char* to_string(AdaptiveVariant v) noexcept;

/// 0.001 * trace(K K^T) / N_E.
double default_alpha(const LeadField& k);

/// Evaluates the family estimator voxel by voxel.
VoxelEstimate family_estimate(const LeadField& k, const FamilyParamC& c, const Measurement& phi,
                              const RankPolicy& policy = {});

/// Materializes the family estimator as a stacked operator with voxel
/// blocks (K_i^T C K_i)^{+1/2} K_i^T C.
InverseOperator family_operator(const LeadField& k, const FamilyParamC& c,
                                const RankPolicy& policy = {});

/// sLORETA: C = (K K^T + alpha R)^+, R = H for EEG and I for MEG.
FamilyParamC c_sloreta(const LeadField& k, double alpha,
                       const RankPolicy& policy = kGramRankPolicy);

/// sLORETA with alpha = sigma_phi / sigma_j.
FamilyParamC c_sloreta_noise_matched(const LeadField& k, double sigma_phi, double sigma_j,
                                     const RankPolicy& policy = kGramRankPolicy);

/// Data-dependent C from the sample covariance of repeated measurements.
/// With N_K <= N_E samples the result carries a warning.
FamilyParamC c_adaptive(const std::vector<Measurement>& samples, AdaptiveVariant variant,
                        Modality modality = Modality::eeg,
                        const RankPolicy& policy = kGramRankPolicy);

/// Weighted minimum norm operator T = W^-1 K^T (K W^-1 K^T + alpha R)^+.
/// W^-1 is taken block-wise (pseudo-inverse for rank-deficient blocks).
InverseOperator wmn_operator(const LeadField& k, const BlockWeights& w, double alpha,
                             const RankPolicy& gram_policy = kGramRankPolicy,
                             const RankPolicy& block_policy = {});

/// Depth weighting blocks w_j * I with w_j = ||K_j||_F^p.
BlockWeights depth_weights(const LeadField& k, double p);

/// Applies an operator to a measurement.
VoxelEstimate apply_operator(const InverseOperator& t, const VectorXd& phi);

/// Power map ||T_i phi||^2 only.
VectorXd power_map(const InverseOperator& t, const VectorXd& phi);

}  // namespace exactloc
