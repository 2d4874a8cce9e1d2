#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "exactloc/types.hpp"

namespace exactloc {

inline constexpr double kDefaultConductivity = 0.33;  // S/m
inline constexpr double kDefaultHeadRadius = 0.085;   // m
inline constexpr double kDefaultCapAngle = 2.0 * 3.14159265358979323846 / 3.0;
inline constexpr double kDefaultGridSpacing = 0.015;  // m
inline constexpr double kDefaultMaxNormFraction = 0.8;
inline constexpr Index kMinElectrodes = 19;

using Rng = std::mt19937_64;

struct SensorMontage {
  std::vector<Vector3d> positions;

  Index size() const { return static_cast<Index>(positions.size()); }

  /// Distinct positions; optionally at least kMinElectrodes sensors.
  void validate(bool require_min_electrodes = true) const;
};

struct SourceSpace {
  std::vector<Vector3d> positions;
  std::optional<std::vector<Vector3d>> normals;

  Index size() const { return static_cast<Index>(positions.size()); }
  bool has_normals() const { return normals.has_value(); }

  /// Distinct positions strictly inside radius*(1 - margin); unit normals.
  void validate(double head_radius, double margin = 1e-6) const;
};

enum class NoiseMode { none, measurement, biological, both };

NoiseMode parse_noise_mode(const std::string& text);
const char* to_string(NoiseMode mode) noexcept;

/// Additive noise model: measurement noise with covariance sigma_phi*H and
/// biological source noise with covariance sigma_j*I (or sigma_j*W^-1 when
/// `structured_weights` is set).
struct NoiseSpec {
  double sigma_phi = 0.0;
  double sigma_j = 0.0;
  NoiseMode mode = NoiseMode::none;
  std::uint64_t seed = 0;
  std::optional<BlockWeights> structured_weights;

  bool has_measurement() const { return mode == NoiseMode::measurement || mode == NoiseMode::both; }
  bool has_biological() const { return mode == NoiseMode::biological || mode == NoiseMode::both; }
  void validate() const;
};

/// H = I - 11^T / n.
MatrixXd centering_matrix(Index n);

LeadField leadfield_infinite_medium(const SensorMontage& montage, const SourceSpace& sources,
                                    double sigma = kDefaultConductivity);

LeadField leadfield_sphere_in_air(const SensorMontage& montage, const SourceSpace& sources,
                                  double sigma = kDefaultConductivity);

/// Rank-2 surrogate for a spherical MEG lead field: infinite-medium gains with
/// the radial source component projected out of every voxel block, so radial
/// dipoles are silent. Voxels at the origin are fully silent and rejected.
LeadField leadfield_tangential_surrogate(const SensorMontage& montage, const SourceSpace& sources,
                                         double sigma = kDefaultConductivity);

LeadField average_reference(const LeadField& k);
Measurement average_reference(const Measurement& m);

/// Gain projected onto the source-space normals: column j is K_j n_j.
LeadField orient(const LeadField& k, const SourceSpace& sources);

SensorMontage montage_fibonacci_cap(Index n, double radius = kDefaultHeadRadius,
                                    double cap_angle = kDefaultCapAngle);

/// Cubic lattice points with ||r|| <= radius * max_norm_fraction, ordered
/// with z slowest and x fastest.
SourceSpace sources_regular_grid(double radius = kDefaultHeadRadius,
                                 double spacing = kDefaultGridSpacing,
                                 double max_norm_fraction = kDefaultMaxNormFraction);

/// Attaches outward radial normals r/||r||. A voxel at the origin gets
/// `origin_normal`.
SourceSpace with_radial_normals(SourceSpace sources,
                                const Vector3d& origin_normal = Vector3d::UnitZ());

/// Removes the listed voxel indices (and their normals).
SourceSpace prune_voxels(const SourceSpace& sources, const std::vector<Index>& drop);

/// Noiseless K_j A plus the configured noise; `rng` supplies all draws.
Measurement simulate_point_source(const LeadField& k, Index j, const VectorXd& moment,
                                  const NoiseSpec& noise, Rng& rng);

/// Same, seeding a fresh generator from noise.seed.
Measurement simulate_point_source(const LeadField& k, Index j, const VectorXd& moment,
                                  const NoiseSpec& noise);

/// Draws zero-mean noise vectors (measurement + biological) for a fixed
/// lead field and spec; per-voxel covariance factors are computed once.
class NoiseSampler {
 public:
  NoiseSampler(const LeadField& k, const NoiseSpec& noise);

  VectorXd draw(Rng& rng) const;

 private:
  const LeadField* k_;
  NoiseSpec noise_;
  // Stacked per-voxel factors L_j with L_j L_j^T = W_j^+ (structured noise only).
  MatrixXd factors_;
};

/// Single noise draw; equivalent to NoiseSampler(k, noise).draw(rng).
VectorXd sample_noise(const LeadField& k, const NoiseSpec& noise, Rng& rng);

/// Analytic noise covariance sigma_phi*H + sigma_j*K*S*K^T, with S = I or W^-1.
MatrixXd noise_covariance(const LeadField& k, const NoiseSpec& noise);

}  // namespace exactloc
