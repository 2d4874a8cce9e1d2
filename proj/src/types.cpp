#include "exactloc/types.hpp"

#include <sstream>

#include "exactloc/error.hpp"
#include "exactloc/matrix_kernels.hpp"

namespace exactloc {

const char* to_string(Modality m) noexcept { return m == Modality::eeg ? "eeg" : "meg"; }

Modality parse_modality(const std::string& text) {
  if (text == "eeg" || text == "EEG") return Modality::eeg;
  if (text == "meg" || text == "MEG") return Modality::meg;
  throw Error(ErrorKind::configuration, "unknown modality '" + text + "'");
}

void LeadField::validate() const {
  if (block_size != 1 && block_size != 3) {
    throw Error(ErrorKind::dimension, "lead field block size must be 1 or 3");
  }
  if (matrix.cols() % block_size != 0 || matrix.cols() == 0 || matrix.rows() == 0) {
    std::ostringstream msg;
    msg << "lead field " << matrix.rows() << "x" << matrix.cols()
        << " is not a whole number of voxel blocks of width " << block_size;
    throw Error(ErrorKind::dimension, msg.str());
  }
  if (!matrix.allFinite()) throw Error(ErrorKind::numeric, "lead field has non-finite entries");
}

BlockWeights BlockWeights::identity(Index voxels, Index block_size) {
  BlockWeights w;
  w.blocks.resize(voxels * block_size, block_size);
  for (Index j = 0; j < voxels; ++j) w.block(j).setIdentity();
  return w;
}

BlockWeights inverse_blocks(const BlockWeights& w, double relative_epsilon) {
  const RankPolicy policy{relative_epsilon};
  BlockWeights out;
  out.blocks.resize(w.blocks.rows(), w.blocks.cols());
  for (Index j = 0; j < w.voxels(); ++j) {
    const MatrixXd b = w.block(j);
    out.block(j) = pseudo_inverse(symmetrized(b), policy);
  }
  return out;
}

MatrixXd expand_blocks(const BlockWeights& w) {
  const Index d = w.block_size();
  MatrixXd out = MatrixXd::Zero(w.blocks.rows(), w.blocks.rows());
  for (Index j = 0; j < w.voxels(); ++j) out.block(j * d, j * d, d, d) = w.block(j);
  return out;
}

MatrixXd regularizer(Index n, double alpha, Modality modality) {
  MatrixXd r = MatrixXd::Identity(n, n);
  if (modality == Modality::eeg) r.array() -= 1.0 / static_cast<double>(n);
  return alpha * r;
}

}  // namespace exactloc
