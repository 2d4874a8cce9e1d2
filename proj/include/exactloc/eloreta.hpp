#pragma once

#include <string>
#include <vector>

#include "exactloc/forward_model.hpp"
#include "exactloc/imaging.hpp"
#include "exactloc/matrix_kernels.hpp"
#include "exactloc/types.hpp"

namespace exactloc {

enum class Orientation { free, fixed };

Orientation parse_orientation(const std::string& text);
const char* to_string(Orientation o) noexcept;

struct ELoretaConfig {
  double alpha = 0.0;
  Modality modality = Modality::eeg;
  Orientation orientation = Orientation::free;
  /// Convergence threshold on max_j ||W_j_new - W_j_old||_F / ||W_j_old||_F.
  double tol = 1e-8;
  int max_iters = 500;
  /// Rank rule for the 3x3 weight blocks (square root and inverse).
  RankPolicy rank_policy{};
  /// Rank rule for the N_E x N_E pseudo-inverse M.
  RankPolicy gram_policy = kGramRankPolicy;
  /// Under-relaxation factor in (0, 1]; 1 is plain substitution.
  double relaxation = 1.0;
  /// Record the standardization objectives after every iteration.
  bool track_objective = false;

  void validate() const;
};

struct FixedPointReport {
  int iterations = 0;
  double final_delta = 0.0;
  /// max_j ||W_j^2 - K_j^T M K_j||_F / ||K_j^T M K_j||_F with M from the final W.
  double residual = 0.0;
  bool converged = false;
  double relaxation = 1.0;
  std::vector<double> delta_history;
  /// sum_j ||I - Sigma_jj||_F^2 over the diagonal blocks, before the first
  /// update and after every iteration (only when tracking is enabled).
  std::vector<double> objective_history;
  /// The full-matrix ||I - Sigma||_F^2 at the same points; left empty when
  /// N_V exceeds the covariance ceiling.
  std::vector<double> full_objective_history;
  /// Retained rank of every final weight block.
  std::vector<Index> block_ranks;
};

struct ELoretaSolution {
  BlockWeights weights;
  FixedPointReport report;
};

/// Block-diagonal weights for free orientation (3x3 blocks).
ELoretaSolution eloreta_weights_free(const LeadField& k, const ELoretaConfig& cfg,
                                     const BlockWeights* initial = nullptr);

/// Diagonal weights for known orientation; K is the 3-column lead field and
/// the normals come from `sources`.
ELoretaSolution eloreta_weights_fixed(const LeadField& k, const SourceSpace& sources,
                                      const ELoretaConfig& cfg,
                                      const BlockWeights* initial = nullptr);

/// Runs the fixed-point iteration on any gain whose block size matches the
/// weights (3 for free orientation, 1 for an oriented gain K N).
ELoretaSolution solve_eloreta(const LeadField& gain, const ELoretaConfig& cfg,
                              const BlockWeights* initial = nullptr);

/// M = (K W^-1 K^T + alpha R)^+.
MatrixXd eloreta_gram_inverse(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg);

/// T = W^-1 K^T M. For fixed orientation pass the oriented gain orient(K, sources).
InverseOperator eloreta_operator(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg);

/// The parameter matrix C = M that makes eLORETA a family member.
FamilyParamC eloreta_family_c(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg);

/// max_j relative Frobenius residual of W_j^2 = K_j^T M K_j.
double fixed_point_residual(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg);

enum class CovarianceMode { full, blocks_only };

struct SourceCovariance {
  /// Full (d N_V)^2 matrix, or stacked d x d diagonal blocks in blocks-only mode.
  MatrixXd matrix;
  CovarianceMode mode = CovarianceMode::full;
  Index block_size = 3;

  auto diagonal_block(Index j) const {
    return mode == CovarianceMode::full
               ? matrix.block(j * block_size, j * block_size, block_size, block_size)
               : matrix.block(j * block_size, 0, block_size, block_size);
  }
};

inline constexpr Index kDefaultCovarianceVoxelCeiling = 2000;

/// Estimated-source covariance W^-1 K^T M K W^-1.
SourceCovariance source_covariance(const LeadField& gain, const BlockWeights& w,
                                   const ELoretaConfig& cfg,
                                   CovarianceMode mode = CovarianceMode::full,
                                   Index max_voxels = kDefaultCovarianceVoxelCeiling);

/// ||I - Sigma||_F^2 for a full source covariance.
double standardization_objective(const SourceCovariance& sigma);
/// sum_j ||I - Sigma_jj||_F^2; works in either covariance mode. This is the
/// part of the objective the fixed point drives to zero.
double block_standardization_objective(const SourceCovariance& sigma);

}  // namespace exactloc
