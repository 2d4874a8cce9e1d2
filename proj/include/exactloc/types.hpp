#pragma once

#include <string>

#include <Eigen/Dense>

namespace exactloc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

enum class Modality { eeg, meg };

const char* to_string(Modality m) noexcept;
Modality parse_modality(const std::string& text);

/// Gain matrix mapping source components to sensors.
///
/// Columns are grouped per voxel: `block_size` = 3 for free-orientation
/// dipoles (x, y, z), 1 for a gain already projected onto known normals.
struct LeadField {
  MatrixXd matrix;
  Index block_size = 3;
  bool average_referenced = false;
  Modality modality = Modality::eeg;

  Index sensors() const { return matrix.rows(); }
  Index voxels() const { return block_size == 0 ? 0 : matrix.cols() / block_size; }
  auto block(Index j) const { return matrix.middleCols(j * block_size, block_size); }

  /// Throws on inconsistent column count or non-finite entries.
  void validate() const;
};

/// Sensor-space data vector.
struct Measurement {
  VectorXd phi;
  bool average_referenced = false;
};

/// Block-diagonal source weights W, stored as N_V stacked d x d blocks
/// (d*N_V rows, d columns). d = 3 is the free-orientation case, d = 1 the
/// diagonal (known-orientation) case.
struct BlockWeights {
  MatrixXd blocks;

  Index block_size() const { return blocks.cols(); }
  Index voxels() const { return block_size() == 0 ? 0 : blocks.rows() / block_size(); }
  bool is_diagonal() const { return block_size() == 1; }
  auto block(Index j) const { return blocks.middleRows(j * block_size(), block_size()); }
  auto block(Index j) { return blocks.middleRows(j * block_size(), block_size()); }

  static BlockWeights identity(Index voxels, Index block_size);
};

/// Linear map from measurements to stacked per-voxel estimates
/// (block_size * N_V rows, N_E columns).
struct InverseOperator {
  MatrixXd matrix;
  Index block_size = 3;

  Index voxels() const { return block_size == 0 ? 0 : matrix.rows() / block_size; }
  auto block(Index i) const { return matrix.middleRows(i * block_size, block_size); }
};

/// Block-wise Moore-Penrose inverse of W (rank-deficient blocks allowed).
BlockWeights inverse_blocks(const BlockWeights& w, double relative_epsilon = 1e-5);

/// Dense block-diagonal matrix assembled from stacked blocks.
MatrixXd expand_blocks(const BlockWeights& w);

/// Regularization term alpha*H (EEG) or alpha*I (MEG) of size n.
MatrixXd regularizer(Index n, double alpha, Modality modality);

}  // namespace exactloc
