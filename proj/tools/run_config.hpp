#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "exactloc/harness.hpp"

namespace exactloc::cli {

enum class ForwardModel { infinite, sphere, tangential };

struct MontageSource {
  std::optional<std::filesystem::path> file;
  Index electrodes = 19;
  double radius = kDefaultHeadRadius;
  double cap_angle = kDefaultCapAngle;
};

struct GridSource {
  std::optional<std::filesystem::path> file;
  double radius = kDefaultHeadRadius;
  double spacing = kDefaultGridSpacing;
  double max_norm_fraction = kDefaultMaxNormFraction;
  bool radial_normals = false;
  bool prune_origin = false;
};

struct ForwardSection {
  ForwardModel model = ForwardModel::sphere;
  double sigma = kDefaultConductivity;
  /// Precomputed lead field (matrix text); its manifest is read from the
  /// sibling .json file when present.
  std::optional<std::filesystem::path> leadfield;
};

struct SimulateSection {
  Index voxel = 0;
  std::optional<VectorXd> moment;
  NoiseSpec noise;
};

struct SweepSection {
  std::vector<MethodSpec> methods;
  MomentPolicy moments;
  NoiseSpec noise;
  Evaluation evaluation = Evaluation::noiseless;
  Index n_trials = 1;
  bool structured_biological_noise = false;
  std::optional<double> expect_fraction_exact;
};

struct RunConfig {
  std::filesystem::path base_dir = ".";
  std::uint64_t seed = 0;
  MontageSource montage;
  GridSource grid;
  ForwardSection forward;
  SweepSection sweep;
  SimulateSection simulate;
  std::optional<std::filesystem::path> measurement;
  std::filesystem::path output = "out";

  std::vector<SweepConfig> sweep_configs() const;
};

/// Parses a configuration document; every object rejects keys it does not
/// know. Relative paths are resolved against `base_dir`. Throws
/// Error(configuration) with the offending JSON path in the message.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed_override);

/// Reads and parses a configuration file; a missing path yields defaults.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          std::optional<std::uint64_t> seed_override);

const char* to_string(ForwardModel m) noexcept;

/// Montage, source space and referenced lead field described by a
/// configuration, plus the manifest written next to an exported lead field.
struct Problem {
  SensorMontage montage;
  SourceSpace sources;
  LeadField k;
  nlohmann::json manifest;
};

/// Builds or loads the forward problem. A precomputed lead field is checked
/// against its manifest, the montage file and the source space.
Problem load_problem(const RunConfig& cfg);

}  // namespace exactloc::cli
