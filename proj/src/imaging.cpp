#include "exactloc/imaging.hpp"

#include <sstream>

#include "exactloc/error.hpp"

namespace exactloc {

namespace {

void require_family_inputs(const LeadField& k, const FamilyParamC& c) {
  k.validate();
  c.validate();
  if (c.matrix.rows() != k.sensors()) {
    std::ostringstream msg;
    msg << "C is " << c.matrix.rows() << "x" << c.matrix.cols() << " but the lead field has "
        << k.sensors() << " sensors";
    throw Error(ErrorKind::dimension, msg.str());
  }
  if (k.modality == Modality::eeg && !k.average_referenced) {
    throw Error(ErrorKind::input, "EEG lead field must be average-referenced");
  }
}

MatrixXd gram(const LeadField& k) { return symmetrized(k.matrix * k.matrix.transpose()); }

}  // namespace

const char* to_string(CProvenance p) noexcept {
  switch (p) {
    case CProvenance::sloreta: return "sloreta";
    case CProvenance::adaptive_inverse_covariance: return "adaptive-inverse-covariance";
    case CProvenance::adaptive_squared_inverse_covariance: return "adaptive-squared-inverse-covariance";
    case CProvenance::eloreta: return "eloreta";
    case CProvenance::custom: return "custom";
  }
  return "custom";
}

AdaptiveVariant parse_adaptive_variant(const std::string& text) {
  if (text == "inverse-covariance") return AdaptiveVariant::inverse_covariance;
  if (text == "squared-inverse-covariance") return AdaptiveVariant::squared_inverse_covariance;
  throw Error(ErrorKind::configuration, "unknown adaptive variant '" + text + "'");
}

const char* to_string(AdaptiveVariant v) noexcept {
  return v == AdaptiveVariant::inverse_covariance ? "inverse-covariance"
                                                  : "squared-inverse-covariance";
}

void FamilyParamC::validate() const {
  if (matrix.rows() != matrix.cols() || matrix.rows() == 0) {
    throw Error(ErrorKind::dimension, "C must be square and non-empty");
  }
  if (!matrix.allFinite()) throw Error(ErrorKind::numeric, "C has non-finite entries");
  if (relative_asymmetry(matrix) > 1e-12) throw Error(ErrorKind::numeric, "C is not symmetric");
  if (modality == Modality::eeg) {
    const double scale = matrix.norm();
    const VectorXd ones = VectorXd::Ones(matrix.rows());
    if ((matrix * ones).norm() > 1e-8 * scale * std::sqrt(static_cast<double>(matrix.rows()))) {
      throw Error(ErrorKind::numeric, "EEG C must have the vector of ones in its null space");
    }
  }
}

Index FamilyParamC::rank(const RankPolicy& policy) const { return sym_eig(matrix).kept(policy); }

double default_alpha(const LeadField& k) {
  return 1e-3 * k.matrix.squaredNorm() / static_cast<double>(k.sensors());
}

InverseOperator family_operator(const LeadField& k, const FamilyParamC& c, const RankPolicy& policy) {
  require_family_inputs(k, c);
  const Index d = k.block_size;
  InverseOperator t;
  t.block_size = d;
  t.matrix.resize(d * k.voxels(), k.sensors());
  for (Index i = 0; i < k.voxels(); ++i) {
    const MatrixXd kc = k.block(i).transpose() * c.matrix;  // K_i^T C
    const MatrixXd local = symmetrized(kc * k.block(i));
    t.matrix.middleRows(i * d, d) = sym_sqrt_pinv(local, policy) * kc;
  }
  return t;
}

VoxelEstimate family_estimate(const LeadField& k, const FamilyParamC& c, const Measurement& phi,
                              const RankPolicy& policy) {
  require_family_inputs(k, c);
  if (phi.phi.size() != k.sensors()) throw Error(ErrorKind::dimension, "measurement size differs from sensor count");
  if (k.modality == Modality::eeg && !phi.average_referenced) {
    throw Error(ErrorKind::input, "EEG measurement must be average-referenced");
  }
  const Index d = k.block_size;
  const VectorXd c_phi = c.matrix * phi.phi;
  VoxelEstimate out;
  out.block_size = d;
  out.j_hat.resize(d * k.voxels());
  out.power.resize(k.voxels());
  for (Index i = 0; i < k.voxels(); ++i) {
    const MatrixXd local = symmetrized(k.block(i).transpose() * c.matrix * k.block(i));
    const VectorXd ji = sym_sqrt_pinv(local, policy) * (k.block(i).transpose() * c_phi);
    out.j_hat.segment(i * d, d) = ji;
    out.power(i) = ji.squaredNorm();
  }
  return out;
}

FamilyParamC c_sloreta(const LeadField& k, double alpha, const RankPolicy& policy) {
  k.validate();
  if (!(alpha >= 0.0)) throw Error(ErrorKind::input, "alpha must be nonnegative");
  if (k.modality == Modality::eeg && !k.average_referenced) {
    throw Error(ErrorKind::input, "EEG lead field must be average-referenced");
  }
  FamilyParamC c;
  c.matrix = pseudo_inverse(gram(k) + regularizer(k.sensors(), alpha, k.modality), policy);
  c.provenance = CProvenance::sloreta;
  c.alpha = alpha;
  c.modality = k.modality;
  return c;
}

FamilyParamC c_sloreta_noise_matched(const LeadField& k, double sigma_phi, double sigma_j,
                                     const RankPolicy& policy) {
  if (!(sigma_j > 0.0)) throw Error(ErrorKind::input, "sigma_j must be positive for noise matching");
  if (!(sigma_phi >= 0.0)) throw Error(ErrorKind::input, "sigma_phi must be nonnegative");
  return c_sloreta(k, sigma_phi / sigma_j, policy);
}

FamilyParamC c_adaptive(const std::vector<Measurement>& samples, AdaptiveVariant variant,
                        Modality modality, const RankPolicy& policy) {
  if (samples.size() < 2) throw Error(ErrorKind::input, "adaptive C needs at least 2 samples");
  const Index ne = samples.front().phi.size();
  MatrixXd data(ne, static_cast<Index>(samples.size()));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].phi.size() != ne) throw Error(ErrorKind::dimension, "samples differ in length");
    data.col(static_cast<Index>(s)) = samples[s].phi;
  }
  const Index nk = data.cols();
  data.colwise() -= data.rowwise().mean();
  const MatrixXd cov = symmetrized(data * data.transpose() / static_cast<double>(nk));

  FamilyParamC c;
  c.modality = modality;
  c.provenance = variant == AdaptiveVariant::inverse_covariance
                     ? CProvenance::adaptive_inverse_covariance
                     : CProvenance::adaptive_squared_inverse_covariance;
  if (cov.isZero(0.0)) {
    c.matrix = MatrixXd::Zero(ne, ne);
  } else {
    c.matrix = pseudo_inverse(cov, policy);
    if (variant == AdaptiveVariant::squared_inverse_covariance) c.matrix = c.matrix * c.matrix;
    c.matrix = symmetrized(c.matrix);
  }

  const Index full_rank = modality == Modality::eeg ? ne - 1 : ne;
  const Index rank = c.matrix.isZero(0.0) ? 0 : c.rank(policy);
  std::ostringstream msg;
  if (nk <= ne) {
    msg << "only " << nk << " samples for " << ne << " sensors; exact localization not guaranteed";
  } else if (rank < full_rank) {
    msg << "adaptive C has rank " << rank << " < " << full_rank
        << "; exact localization not guaranteed";
  }
  if (!msg.str().empty()) c.warning = msg.str();
  return c;
}

InverseOperator wmn_operator(const LeadField& k, const BlockWeights& w, double alpha,
                             const RankPolicy& gram_policy, const RankPolicy& block_policy) {
  k.validate();
  if (!(alpha >= 0.0)) throw Error(ErrorKind::input, "alpha must be nonnegative");
  if (w.voxels() != k.voxels() || w.block_size() != k.block_size) {
    throw Error(ErrorKind::dimension, "weights do not match the lead field layout");
  }
  if (k.modality == Modality::eeg && !k.average_referenced) {
    throw Error(ErrorKind::input, "EEG lead field must be average-referenced");
  }
  const Index d = k.block_size;
  const BlockWeights winv = inverse_blocks(w, block_policy.relative_epsilon);

  // K W^-1, assembled block-wise.
  MatrixXd kw(k.sensors(), k.matrix.cols());
  for (Index j = 0; j < k.voxels(); ++j) kw.middleCols(j * d, d) = k.block(j) * winv.block(j);

  const MatrixXd m = pseudo_inverse(
      symmetrized(kw * k.matrix.transpose()) + regularizer(k.sensors(), alpha, k.modality),
      gram_policy);

  InverseOperator t;
  t.block_size = d;
  t.matrix = kw.transpose() * m;
  return t;
}

BlockWeights depth_weights(const LeadField& k, double p) {
  k.validate();
  BlockWeights w = BlockWeights::identity(k.voxels(), k.block_size);
  for (Index j = 0; j < k.voxels(); ++j) {
    const double norm = k.block(j).norm();
    if (!(norm > 0.0)) throw Error(ErrorKind::numeric, "silent voxel has no depth weight");
    w.block(j) *= std::pow(norm, p);
  }
  return w;
}

VoxelEstimate apply_operator(const InverseOperator& t, const VectorXd& phi) {
  if (phi.size() != t.matrix.cols()) throw Error(ErrorKind::dimension, "measurement size differs from operator width");
  VoxelEstimate out;
  out.block_size = t.block_size;
  out.j_hat = t.matrix * phi;
  out.power.resize(t.voxels());
  for (Index i = 0; i < t.voxels(); ++i) out.power(i) = out.voxel(i).squaredNorm();
  return out;
}

VectorXd power_map(const InverseOperator& t, const VectorXd& phi) { return apply_operator(t, phi).power; }

}  // namespace exactloc
