#include "exactloc/forward_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "exactloc/error.hpp"
#include "exactloc/matrix_kernels.hpp"

namespace exactloc {

namespace {

void require_positive_conductivity(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw Error(ErrorKind::input, "conductivity must be positive and finite");
  }
}

LeadField empty_leadfield(const SensorMontage& montage, const SourceSpace& sources) {
  if (montage.size() == 0 || sources.size() == 0) {
    throw Error(ErrorKind::dimension, "montage and source space must be non-empty");
  }
  LeadField k;
  k.matrix = MatrixXd::Zero(montage.size(), 3 * sources.size());
  k.block_size = 3;
  return k;
}

double sphere_radius(const SensorMontage& montage) {
  const double radius = montage.positions.front().norm();
  for (Index i = 0; i < montage.size(); ++i) {
    const double r = montage.positions[i].norm();
    if (std::abs(r - radius) > 1e-9 * radius) {
      std::ostringstream msg;
      msg << "electrode " << i << " at radius " << r << " is off the sphere of radius " << radius;
      throw Error(ErrorKind::geometry, msg.str());
    }
  }
  return radius;
}

}  // namespace

void SensorMontage::validate(bool require_min_electrodes) const {
  if (require_min_electrodes && size() < kMinElectrodes) {
    std::ostringstream msg;
    msg << "montage has " << size() << " electrodes; at least " << kMinElectrodes << " required";
    throw Error(ErrorKind::configuration, msg.str());
  }
  if (size() == 0) throw Error(ErrorKind::input, "montage is empty");
  for (Index a = 0; a < size(); ++a) {
    if (!positions[a].allFinite()) throw Error(ErrorKind::numeric, "non-finite electrode position");
    for (Index b = a + 1; b < size(); ++b) {
      if ((positions[a] - positions[b]).norm() == 0.0) {
        std::ostringstream msg;
        msg << "electrodes " << a << " and " << b << " coincide";
        throw Error(ErrorKind::geometry, msg.str());
      }
    }
  }
}

void SourceSpace::validate(double head_radius, double margin) const {
  if (size() == 0) throw Error(ErrorKind::input, "source space is empty");
  if (!(margin > 0.0)) throw Error(ErrorKind::configuration, "interior margin must be positive");
  const double limit = head_radius * (1.0 - margin);
  for (Index j = 0; j < size(); ++j) {
    if (!(positions[j].norm() < limit)) {
      std::ostringstream msg;
      msg << "voxel " << j << " lies outside the conductor interior";
      throw Error(ErrorKind::geometry, msg.str());
    }
  }
  for (Index a = 0; a < size(); ++a) {
    for (Index b = a + 1; b < size(); ++b) {
      if ((positions[a] - positions[b]).norm() == 0.0) {
        std::ostringstream msg;
        msg << "voxels " << a << " and " << b << " coincide";
        throw Error(ErrorKind::geometry, msg.str());
      }
    }
  }
  if (normals) {
    if (static_cast<Index>(normals->size()) != size()) {
      throw Error(ErrorKind::dimension, "normal count differs from voxel count");
    }
    for (Index j = 0; j < size(); ++j) {
      if (std::abs((*normals)[j].squaredNorm() - 1.0) > 1e-12) {
        std::ostringstream msg;
        msg << "normal " << j << " is not unit length";
        throw Error(ErrorKind::input, msg.str());
      }
    }
  }
}

NoiseMode parse_noise_mode(const std::string& text) {
  if (text == "none") return NoiseMode::none;
  if (text == "measurement") return NoiseMode::measurement;
  if (text == "biological") return NoiseMode::biological;
  if (text == "both") return NoiseMode::both;
  throw Error(ErrorKind::configuration, "unknown noise mode '" + text + "'");
}

const char* to_string(NoiseMode mode) noexcept {
  switch (mode) {
    case NoiseMode::none: return "none";
    case NoiseMode::measurement: return "measurement";
    case NoiseMode::biological: return "biological";
    case NoiseMode::both: return "both";
  }
  return "none";
}

void NoiseSpec::validate() const {
  if (!(sigma_phi >= 0.0) || !(sigma_j >= 0.0)) {
    throw Error(ErrorKind::input, "noise variances must be nonnegative");
  }
  if (has_measurement() && sigma_phi == 0.0) {
    throw Error(ErrorKind::input, "measurement noise enabled with sigma_phi = 0");
  }
  if (has_biological() && sigma_j == 0.0) {
    throw Error(ErrorKind::input, "biological noise enabled with sigma_j = 0");
  }
}

MatrixXd centering_matrix(Index n) {
  if (n < 2) throw Error(ErrorKind::dimension, "centering matrix needs n >= 2");
  MatrixXd h = MatrixXd::Identity(n, n);
  h.array() -= 1.0 / static_cast<double>(n);
  return h;
}

LeadField leadfield_infinite_medium(const SensorMontage& montage, const SourceSpace& sources,
                                    double sigma) {
  require_positive_conductivity(sigma);
  LeadField k = empty_leadfield(montage, sources);
  const double scale = 1.0 / (4.0 * std::numbers::pi * sigma);
  for (Index i = 0; i < montage.size(); ++i) {
    for (Index j = 0; j < sources.size(); ++j) {
      const Vector3d d = montage.positions[i] - sources.positions[j];
      const double dn = d.norm();
      if (dn == 0.0) {
        std::ostringstream msg;
        msg << "electrode " << i << " coincides with voxel " << j;
        throw Error(ErrorKind::singularity, msg.str());
      }
      k.matrix.block<1, 3>(i, 3 * j) = (scale / (dn * dn * dn)) * d.transpose();
    }
  }
  return k;
}

LeadField leadfield_sphere_in_air(const SensorMontage& montage, const SourceSpace& sources,
                                  double sigma) {
  require_positive_conductivity(sigma);
  LeadField k = empty_leadfield(montage, sources);
  const double radius = sphere_radius(montage);
  for (Index j = 0; j < sources.size(); ++j) {
    if (!(sources.positions[j].norm() < radius)) {
      std::ostringstream msg;
      msg << "voxel " << j << " is not strictly inside the sphere";
      throw Error(ErrorKind::geometry, msg.str());
    }
  }

  const double scale = 1.0 / (4.0 * std::numbers::pi * sigma);
  for (Index i = 0; i < montage.size(); ++i) {
    const Vector3d& re = montage.positions[i];
    const double rn = re.norm();
    for (Index j = 0; j < sources.size(); ++j) {
      const Vector3d d = re - sources.positions[j];
      const double dn = d.norm();
      const double denom = rn * dn * (rn * dn + re.dot(d));
      if (!(dn > 0.0) || !(denom > 0.0)) {
        std::ostringstream msg;
        msg << "degenerate sphere lead field for electrode " << i << ", voxel " << j;
        throw Error(ErrorKind::singularity, msg.str());
      }
      const Vector3d kij = 2.0 * d / (dn * dn * dn) + (re * dn + d * rn) / denom;
      k.matrix.block<1, 3>(i, 3 * j) = scale * kij.transpose();
    }
  }
  return k;
}

LeadField leadfield_tangential_surrogate(const SensorMontage& montage, const SourceSpace& sources,
                                         double sigma) {
  LeadField k = leadfield_infinite_medium(montage, sources, sigma);
  k.modality = Modality::meg;
  for (Index j = 0; j < sources.size(); ++j) {
    const Vector3d& r = sources.positions[j];
    if (r.norm() < 1e-12) {
      std::ostringstream msg;
      msg << "voxel " << j << " at the sphere centre is silent; prune it from the source space";
      throw Error(ErrorKind::geometry, msg.str());
    }
    const Vector3d u = r.normalized();
    const Eigen::Matrix3d tangential = Eigen::Matrix3d::Identity() - u * u.transpose();
    k.matrix.middleCols<3>(3 * j) = k.matrix.middleCols<3>(3 * j) * tangential;
  }
  return k;
}

LeadField average_reference(const LeadField& k) {
  k.validate();
  if (k.modality == Modality::meg) {
    throw Error(ErrorKind::input, "average reference applies to EEG lead fields only");
  }
  LeadField out = k;
  out.matrix.rowwise() -= k.matrix.colwise().mean();
  out.average_referenced = true;
  return out;
}

Measurement average_reference(const Measurement& m) {
  if (m.phi.size() < 2) throw Error(ErrorKind::dimension, "measurement needs at least 2 channels");
  Measurement out;
  out.phi = m.phi.array() - m.phi.mean();
  out.average_referenced = true;
  return out;
}

LeadField orient(const LeadField& k, const SourceSpace& sources) {
  k.validate();
  if (k.block_size != 3) throw Error(ErrorKind::dimension, "orient expects a 3-column-per-voxel lead field");
  if (!sources.has_normals()) throw Error(ErrorKind::input, "source space has no normals");
  if (sources.size() != k.voxels()) {
    throw Error(ErrorKind::dimension, "source space and lead field voxel counts differ");
  }
  LeadField out;
  out.matrix.resize(k.sensors(), k.voxels());
  for (Index j = 0; j < k.voxels(); ++j) out.matrix.col(j) = k.block(j) * (*sources.normals)[j];
  out.block_size = 1;
  out.average_referenced = k.average_referenced;
  out.modality = k.modality;
  return out;
}

SensorMontage montage_fibonacci_cap(Index n, double radius, double cap_angle) {
  if (n < 2) throw Error(ErrorKind::input, "montage needs at least 2 electrodes");
  if (!(radius > 0.0)) throw Error(ErrorKind::input, "montage radius must be positive");
  if (!(cap_angle > 0.0 && cap_angle <= std::numbers::pi)) {
    throw Error(ErrorKind::input, "cap angle must lie in (0, pi]");
  }
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double cap_height = 1.0 - std::cos(cap_angle);
  SensorMontage montage;
  montage.positions.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    // Equal-area spacing in z over the cap, golden-angle spacing in azimuth.
    const double z = 1.0 - cap_height * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * static_cast<double>(i);
    montage.positions.emplace_back(radius * rho * std::cos(phi), radius * rho * std::sin(phi),
                                   radius * z);
  }
  return montage;
}

SourceSpace sources_regular_grid(double radius, double spacing, double max_norm_fraction) {
  if (!(spacing > 0.0) || !(radius > 0.0)) {
    throw Error(ErrorKind::configuration, "grid radius and spacing must be positive");
  }
  if (!(max_norm_fraction > 0.0 && max_norm_fraction < 1.0)) {
    throw Error(ErrorKind::configuration, "max_norm_fraction must lie in (0, 1)");
  }
  const double limit = radius * max_norm_fraction;
  const auto m = static_cast<long>(std::floor(limit / spacing));
  SourceSpace sources;
  for (long z = -m; z <= m; ++z) {
    for (long y = -m; y <= m; ++y) {
      for (long x = -m; x <= m; ++x) {
        const Vector3d r(static_cast<double>(x) * spacing, static_cast<double>(y) * spacing,
                         static_cast<double>(z) * spacing);
        if (r.norm() <= limit) sources.positions.push_back(r);
      }
    }
  }
  if (sources.positions.empty()) throw Error(ErrorKind::configuration, "source grid is empty");
  return sources;
}

SourceSpace with_radial_normals(SourceSpace sources, const Vector3d& origin_normal) {
  std::vector<Vector3d> normals;
  normals.reserve(sources.positions.size());
  for (const auto& r : sources.positions) {
    normals.push_back(r.norm() > 0.0 ? Vector3d(r.normalized()) : Vector3d(origin_normal.normalized()));
  }
  sources.normals = std::move(normals);
  return sources;
}

SourceSpace prune_voxels(const SourceSpace& sources, const std::vector<Index>& drop) {
  std::vector<bool> removed(sources.positions.size(), false);
  for (Index j : drop) {
    if (j < 0 || j >= sources.size()) throw Error(ErrorKind::input, "prune index out of range");
    removed[static_cast<std::size_t>(j)] = true;
  }
  SourceSpace out;
  if (sources.normals) out.normals.emplace();
  for (std::size_t j = 0; j < sources.positions.size(); ++j) {
    if (removed[j]) continue;
    out.positions.push_back(sources.positions[j]);
    if (sources.normals) out.normals->push_back((*sources.normals)[j]);
  }
  return out;
}

NoiseSampler::NoiseSampler(const LeadField& k, const NoiseSpec& noise) : k_(&k), noise_(noise) {
  noise_.validate();
  if (noise_.has_biological() && noise_.structured_weights) {
    const BlockWeights& w = *noise_.structured_weights;
    const Index d = k.block_size;
    if (w.voxels() != k.voxels() || w.block_size() != d) {
      throw Error(ErrorKind::dimension, "structured noise weights do not match the lead field");
    }
    const BlockWeights winv = inverse_blocks(w);
    factors_.resize(d * k.voxels(), d);
    for (Index j = 0; j < k.voxels(); ++j) {
      factors_.middleRows(j * d, d) = sym_sqrt(symmetrized(winv.block(j)));
    }
  }
}

VectorXd NoiseSampler::draw(Rng& rng) const {
  const LeadField& k = *k_;
  const Index ne = k.sensors();
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd out = VectorXd::Zero(ne);

  if (noise_.has_measurement()) {
    VectorXd g(ne);
    for (Index i = 0; i < ne; ++i) g(i) = normal(rng);
    if (k.modality == Modality::eeg) g.array() -= g.mean();  // H g
    out += std::sqrt(noise_.sigma_phi) * g;
  }

  if (noise_.has_biological()) {
    const Index d = k.block_size;
    VectorXd eps(k.matrix.cols());
    for (Index c = 0; c < eps.size(); ++c) eps(c) = normal(rng);
    if (factors_.size() > 0) {
      for (Index j = 0; j < k.voxels(); ++j) {
        eps.segment(j * d, d) = factors_.middleRows(j * d, d) * eps.segment(j * d, d);
      }
    }
    out += std::sqrt(noise_.sigma_j) * (k.matrix * eps);
  }
  return out;
}

VectorXd sample_noise(const LeadField& k, const NoiseSpec& noise, Rng& rng) {
  return NoiseSampler(k, noise).draw(rng);
}

Measurement simulate_point_source(const LeadField& k, Index j, const VectorXd& moment,
                                  const NoiseSpec& noise, Rng& rng) {
  k.validate();
  if (k.modality == Modality::eeg && !k.average_referenced) {
    throw Error(ErrorKind::input, "EEG simulation requires an average-referenced lead field");
  }
  if (j < 0 || j >= k.voxels()) {
    std::ostringstream msg;
    msg << "voxel index " << j << " out of range [0, " << k.voxels() << ")";
    throw Error(ErrorKind::input, msg.str());
  }
  if (moment.size() != k.block_size) throw Error(ErrorKind::dimension, "moment size differs from block size");
  if (moment.isZero(0.0)) throw Error(ErrorKind::input, "dipole moment must be non-zero");

  Measurement m;
  m.phi = k.block(j) * moment;
  if (noise.mode != NoiseMode::none) m.phi += sample_noise(k, noise, rng);
  m.average_referenced = k.average_referenced;
  return m;
}

Measurement simulate_point_source(const LeadField& k, Index j, const VectorXd& moment,
                                  const NoiseSpec& noise) {
  Rng rng(noise.seed);
  return simulate_point_source(k, j, moment, noise, rng);
}

MatrixXd noise_covariance(const LeadField& k, const NoiseSpec& noise) {
  noise.validate();
  const Index ne = k.sensors();
  MatrixXd cov = MatrixXd::Zero(ne, ne);
  if (noise.has_measurement()) cov += regularizer(ne, noise.sigma_phi, k.modality);
  if (noise.has_biological()) {
    if (noise.structured_weights) {
      const BlockWeights winv = inverse_blocks(*noise.structured_weights);
      const Index d = k.block_size;
      MatrixXd kw(ne, k.matrix.cols());
      for (Index j = 0; j < k.voxels(); ++j) {
        kw.middleCols(j * d, d) = k.block(j) * winv.block(j);
      }
      cov += noise.sigma_j * kw * k.matrix.transpose();
    } else {
      cov += noise.sigma_j * k.matrix * k.matrix.transpose();
    }
  }
  return symmetrized(cov);
}

}  // namespace exactloc
