#include "exactloc/matrix_kernels.hpp"

#include <cmath>
#include <sstream>

#include "exactloc/error.hpp"

namespace exactloc {

namespace {

constexpr double kSymmetryTolerance = 1e-12;

// Applies f to every retained eigenvalue and rebuilds sum f(l_i) G_i G_i^T.
template <typename F>
MatrixXd spectral_map(const MatrixXd& a, const RankPolicy& policy, F f) {
  policy.validate();
  const SymEig eig = sym_eig(a);
  const Index n = a.rows();
  if (n == 0) return MatrixXd(0, 0);

  const double lambda_max = eig.eigenvalues(0);
  const double lambda_min = eig.eigenvalues(n - 1);
  const double floor = -std::max(lambda_max, 0.0) * policy.relative_epsilon;
  if (lambda_min < floor || (lambda_max <= 0.0 && lambda_min < 0.0)) {
    std::ostringstream msg;
    msg << "matrix is indefinite: smallest eigenvalue " << lambda_min << " vs largest "
        << lambda_max;
    throw Error(ErrorKind::numeric, msg.str());
  }

  const Index rank = eig.kept(policy);
  MatrixXd out = MatrixXd::Zero(n, n);
  for (Index i = 0; i < rank; ++i) {
    const auto v = eig.eigenvectors.col(i);
    out.noalias() += f(eig.eigenvalues(i)) * v * v.transpose();
  }
  return symmetrized(out);
}

}  // namespace

void RankPolicy::validate() const {
  if (!(relative_epsilon > 0.0 && relative_epsilon < 1.0)) {
    throw Error(ErrorKind::configuration, "rank policy relative_epsilon must lie in (0, 1)");
  }
}

bool RankPolicy::keeps(double lambda, double lambda_max) const {
  if (!(lambda_max > 0.0)) return false;
  return lambda / lambda_max >= relative_epsilon;
}

Index SymEig::kept(const RankPolicy& policy) const {
  if (eigenvalues.size() == 0) return 0;
  const double lambda_max = eigenvalues(0);
  Index count = 0;
  while (count < eigenvalues.size() && policy.keeps(eigenvalues(count), lambda_max)) ++count;
  return count;
}

double relative_asymmetry(const MatrixXd& a) {
  const double norm = a.norm();
  if (norm == 0.0) return 0.0;
  return (a - a.transpose()).norm() / norm;
}

SymEig sym_eig(const MatrixXd& a) {
  if (a.rows() != a.cols()) {
    std::ostringstream msg;
    msg << "sym_eig expects a square matrix, got " << a.rows() << "x" << a.cols();
    throw Error(ErrorKind::dimension, msg.str());
  }
  if (!a.allFinite()) throw Error(ErrorKind::numeric, "sym_eig input has non-finite entries");
  if (relative_asymmetry(a) > kSymmetryTolerance) {
    throw Error(ErrorKind::numeric, "sym_eig input is not symmetric");
  }

  const Index n = a.rows();
  SymEig out;
  if (n == 0) return out;

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(symmetrized(a));
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::numeric, "symmetric eigendecomposition did not converge");
  }

  // Eigen returns ascending order.
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();

  for (Index c = 0; c < n; ++c) {
    auto v = out.eigenvectors.col(c);
    Index pivot = 0;
    for (Index r = 1; r < n; ++r) {
      if (std::abs(v(r)) > std::abs(v(pivot))) pivot = r;
    }
    if (v(pivot) < 0.0) v = -v;
  }
  return out;
}

MatrixXd pseudo_inverse(const MatrixXd& a, const RankPolicy& policy) {
  return spectral_map(a, policy, [](double l) { return 1.0 / l; });
}

MatrixXd sym_sqrt(const MatrixXd& a, const RankPolicy& policy) {
  return spectral_map(a, policy, [](double l) { return std::sqrt(l); });
}

MatrixXd sym_sqrt_pinv(const MatrixXd& a, const RankPolicy& policy) {
  return spectral_map(a, policy, [](double l) { return 1.0 / std::sqrt(l); });
}

}  // namespace exactloc
