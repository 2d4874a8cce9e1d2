#pragma once

#include <Eigen/Dense>

namespace exactloc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Decides which eigenvalues of a PSD matrix count as numerically zero.
///
/// An eigenvalue is dropped iff lambda_i / lambda_max < relative_epsilon.
/// Eigenvalues in [-lambda_max * relative_epsilon, 0) are rounding noise and
/// clamped to zero; anything more negative is rejected.
struct RankPolicy {
  double relative_epsilon = 1e-5;

  void validate() const;
  bool keeps(double lambda, double lambda_max) const;
};

/// Policy used for measurement-space (N_E x N_E) Gram pseudo-inverses. The
/// spectrum of a lead-field Gram matrix routinely spans more than five
/// decades, so only the reference null space (rounding level) is dropped.
inline constexpr RankPolicy kGramRankPolicy{1e-12};

/// Eigendecomposition of a real symmetric matrix.
/// Eigenvalues are sorted in descending order; each eigenvector has its
/// largest-magnitude entry positive (ties resolved toward the lowest index).
struct SymEig {
  VectorXd eigenvalues;
  MatrixXd eigenvectors;

  /// Number of eigenvalues retained under `policy` (eigenvalues are descending).
  Index kept(const RankPolicy& policy) const;
};

SymEig sym_eig(const MatrixXd& a);

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
MatrixXd pseudo_inverse(const MatrixXd& a, const RankPolicy& policy = {});

/// Symmetric square root restricted to the retained eigenspace.
MatrixXd sym_sqrt(const MatrixXd& a, const RankPolicy& policy = {});

/// Pseudo-inverse of the symmetric square root, i.e. sum of
/// lambda_i^{-1/2} G_i G_i^T over retained eigenpairs.
MatrixXd sym_sqrt_pinv(const MatrixXd& a, const RankPolicy& policy = {});

/// Relative Frobenius asymmetry ||A - A^T|| / ||A|| (0 for the zero matrix).
double relative_asymmetry(const MatrixXd& a);

inline MatrixXd symmetrized(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

}  // namespace exactloc
