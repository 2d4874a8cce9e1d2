#include "exactloc/eloreta.hpp"

#include <algorithm>
#include <sstream>

#include "exactloc/error.hpp"

namespace exactloc {

namespace {

void require_gain(const LeadField& gain, const ELoretaConfig& cfg) {
  cfg.validate();
  gain.validate();
  if (gain.modality != cfg.modality) {
    throw Error(ErrorKind::input, std::string("solver configured for ") + to_string(cfg.modality) +
                                      " but lead field is " + to_string(gain.modality));
  }
  if (gain.modality == Modality::eeg && !gain.average_referenced) {
    throw Error(ErrorKind::input, "EEG lead field must be average-referenced");
  }
}

void require_weights(const LeadField& gain, const BlockWeights& w) {
  if (w.voxels() != gain.voxels() || w.block_size() != gain.block_size) {
    throw Error(ErrorKind::dimension, "weights do not match the gain layout");
  }
}

// K W^-1 assembled block-wise.
MatrixXd weighted_gain(const LeadField& gain, const BlockWeights& w, const RankPolicy& policy) {
  const Index d = gain.block_size;
  const BlockWeights winv = inverse_blocks(w, policy.relative_epsilon);
  MatrixXd kw(gain.sensors(), gain.matrix.cols());
  for (Index j = 0; j < gain.voxels(); ++j) kw.middleCols(j * d, d) = gain.block(j) * winv.block(j);
  return kw;
}

void reject_silent_voxels(const LeadField& gain) {
  double largest = 0.0;
  for (Index j = 0; j < gain.voxels(); ++j) largest = std::max(largest, gain.block(j).norm());
  std::vector<Index> silent;
  for (Index j = 0; j < gain.voxels(); ++j) {
    if (!(gain.block(j).norm() > 1e-10 * largest)) silent.push_back(j);
  }
  if (silent.empty()) return;
  std::ostringstream msg;
  msg << silent.size() << " silent voxel(s) must be pruned from the source space:";
  for (std::size_t s = 0; s < silent.size() && s < 20; ++s) msg << ' ' << silent[s];
  if (silent.size() > 20) msg << " ...";
  throw Error(ErrorKind::singularity, msg.str());
}

// Smallest admissible block rank: full for EEG, one dimension may be silent for MEG.
Index minimum_block_rank(const LeadField& gain) {
  if (gain.modality == Modality::eeg || gain.block_size == 1) return gain.block_size;
  return gain.block_size - 1;
}

}  // namespace

Orientation parse_orientation(const std::string& text) {
  if (text == "free") return Orientation::free;
  if (text == "fixed") return Orientation::fixed;
  throw Error(ErrorKind::configuration, "unknown orientation '" + text + "'");
}

const char* to_string(Orientation o) noexcept { return o == Orientation::free ? "free" : "fixed"; }

void ELoretaConfig::validate() const {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::configuration, "alpha must be nonnegative");
  if (!(tol > 0.0)) throw Error(ErrorKind::configuration, "tol must be positive");
  if (max_iters < 1) throw Error(ErrorKind::configuration, "max_iters must be at least 1");
  if (!(relaxation > 0.0 && relaxation <= 1.0)) {
    throw Error(ErrorKind::configuration, "relaxation must lie in (0, 1]");
  }
  rank_policy.validate();
  gram_policy.validate();
}

MatrixXd eloreta_gram_inverse(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg) {
  require_gain(gain, cfg);
  require_weights(gain, w);
  const MatrixXd kw = weighted_gain(gain, w, cfg.rank_policy);
  const MatrixXd s = symmetrized(kw * gain.matrix.transpose()) +
                     regularizer(gain.sensors(), cfg.alpha, gain.modality);
  return pseudo_inverse(symmetrized(s), cfg.gram_policy);
}

double fixed_point_residual(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg) {
  const MatrixXd m = eloreta_gram_inverse(gain, w, cfg);
  double worst = 0.0;
  for (Index j = 0; j < gain.voxels(); ++j) {
    const MatrixXd target = symmetrized(gain.block(j).transpose() * m * gain.block(j));
    const MatrixXd wj = w.block(j);
    const double scale = target.norm();
    const double r = scale > 0.0 ? (wj * wj - target).norm() / scale : (wj * wj).norm();
    worst = std::max(worst, r);
  }
  return worst;
}

SourceCovariance source_covariance(const LeadField& gain, const BlockWeights& w,
                                   const ELoretaConfig& cfg, CovarianceMode mode,
                                   Index max_voxels) {
  require_gain(gain, cfg);
  require_weights(gain, w);
  if (mode == CovarianceMode::full && gain.voxels() > max_voxels) {
    std::ostringstream msg;
    msg << "full source covariance refused for " << gain.voxels() << " voxels (ceiling "
        << max_voxels << "); use blocks-only mode";
    throw Error(ErrorKind::configuration, msg.str());
  }
  const Index d = gain.block_size;
  const MatrixXd kw = weighted_gain(gain, w, cfg.rank_policy);
  const MatrixXd m = eloreta_gram_inverse(gain, w, cfg);

  SourceCovariance out;
  out.mode = mode;
  out.block_size = d;
  if (mode == CovarianceMode::full) {
    out.matrix = symmetrized(kw.transpose() * m * kw);
  } else {
    out.matrix.resize(d * gain.voxels(), d);
    for (Index j = 0; j < gain.voxels(); ++j) {
      const auto bj = kw.middleCols(j * d, d);
      out.matrix.middleRows(j * d, d) = symmetrized(bj.transpose() * m * bj);
    }
  }
  return out;
}

double standardization_objective(const SourceCovariance& sigma) {
  if (sigma.mode != CovarianceMode::full) {
    throw Error(ErrorKind::input, "the standardization objective needs the full covariance");
  }
  const Index n = sigma.matrix.rows();
  return (MatrixXd::Identity(n, n) - sigma.matrix).squaredNorm();
}

double block_standardization_objective(const SourceCovariance& sigma) {
  const Index d = sigma.block_size;
  const Index voxels = sigma.matrix.rows() / d;
  double total = 0.0;
  for (Index j = 0; j < voxels; ++j) {
    total += (MatrixXd::Identity(d, d) - MatrixXd(sigma.diagonal_block(j))).squaredNorm();
  }
  return total;
}

ELoretaSolution solve_eloreta(const LeadField& gain, const ELoretaConfig& cfg,
                              const BlockWeights* initial) {
  require_gain(gain, cfg);
  reject_silent_voxels(gain);
  const Index d = gain.block_size;
  const Index min_rank = minimum_block_rank(gain);

  ELoretaSolution sol;
  sol.weights = initial ? *initial : BlockWeights::identity(gain.voxels(), d);
  require_weights(gain, sol.weights);
  FixedPointReport& report = sol.report;
  report.relaxation = cfg.relaxation;
  report.block_ranks.assign(static_cast<std::size_t>(gain.voxels()), d);

  const bool track_full = gain.voxels() <= kDefaultCovarianceVoxelCeiling;
  auto record_objectives = [&] {
    if (!cfg.track_objective) return;
    if (track_full) {
      const SourceCovariance sigma = source_covariance(gain, sol.weights, cfg);
      report.objective_history.push_back(block_standardization_objective(sigma));
      report.full_objective_history.push_back(standardization_objective(sigma));
    } else {
      report.objective_history.push_back(block_standardization_objective(
          source_covariance(gain, sol.weights, cfg, CovarianceMode::blocks_only)));
    }
  };
  record_objectives();

  BlockWeights next = sol.weights;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    // M is shared by every voxel update of this sweep.
    const MatrixXd m = eloreta_gram_inverse(gain, sol.weights, cfg);
    double delta = 0.0;
    for (Index j = 0; j < gain.voxels(); ++j) {
      const MatrixXd local = symmetrized(gain.block(j).transpose() * m * gain.block(j));
      const Index rank = sym_eig(local).kept(cfg.rank_policy);
      if (rank < min_rank) {
        std::ostringstream msg;
        msg << "weight block for voxel " << j << " has rank " << rank << " < " << min_rank;
        throw Error(ErrorKind::numeric, msg.str());
      }
      report.block_ranks[static_cast<std::size_t>(j)] = rank;
      MatrixXd updated = sym_sqrt(local, cfg.rank_policy);
      if (cfg.relaxation != 1.0) {
        updated = (1.0 - cfg.relaxation) * MatrixXd(sol.weights.block(j)) + cfg.relaxation * updated;
      }
      const double old_norm = sol.weights.block(j).norm();
      delta = std::max(delta, (updated - sol.weights.block(j)).norm() / old_norm);
      next.block(j) = updated;
    }
    std::swap(sol.weights, next);
    report.iterations = it;
    report.final_delta = delta;
    report.delta_history.push_back(delta);
    record_objectives();
    if (delta <= cfg.tol) {
      report.converged = true;
      break;
    }
  }
  report.residual = fixed_point_residual(gain, sol.weights, cfg);
  return sol;
}

ELoretaSolution eloreta_weights_free(const LeadField& k, const ELoretaConfig& cfg,
                                     const BlockWeights* initial) {
  if (cfg.orientation != Orientation::free) {
    throw Error(ErrorKind::configuration, "eloreta_weights_free needs orientation = free");
  }
  if (k.block_size != 3) throw Error(ErrorKind::dimension, "free orientation needs 3 columns per voxel");
  return solve_eloreta(k, cfg, initial);
}

ELoretaSolution eloreta_weights_fixed(const LeadField& k, const SourceSpace& sources,
                                      const ELoretaConfig& cfg, const BlockWeights* initial) {
  if (cfg.orientation != Orientation::fixed) {
    throw Error(ErrorKind::configuration, "eloreta_weights_fixed needs orientation = fixed");
  }
  if (sources.has_normals()) {
    for (Index j = 0; j < sources.size(); ++j) {
      if (std::abs((*sources.normals)[j].squaredNorm() - 1.0) > 1e-12) {
        std::ostringstream msg;
        msg << "normal " << j << " is not unit length";
        throw Error(ErrorKind::input, msg.str());
      }
    }
  }
  return solve_eloreta(orient(k, sources), cfg, initial);
}

InverseOperator eloreta_operator(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg) {
  const MatrixXd m = eloreta_gram_inverse(gain, w, cfg);
  InverseOperator t;
  t.block_size = gain.block_size;
  t.matrix = weighted_gain(gain, w, cfg.rank_policy).transpose() * m;
  return t;
}

FamilyParamC eloreta_family_c(const LeadField& gain, const BlockWeights& w, const ELoretaConfig& cfg) {
  FamilyParamC c;
  c.matrix = eloreta_gram_inverse(gain, w, cfg);
  c.provenance = CProvenance::eloreta;
  c.alpha = cfg.alpha;
  c.modality = gain.modality;
  return c;
}

}  // namespace exactloc
