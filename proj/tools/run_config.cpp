#include "run_config.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "exactloc/error.hpp"
#include "exactloc/matrix_io.hpp"

namespace exactloc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorKind::configuration, where + ": " + what);
}

// Strict view of one JSON object: every key must be consumed by a getter or
// check_unused() reports it.
class Section {
 public:
  Section(const json& node, std::string where) : node_(node), where_(std::move(where)) {
    if (!node_.is_object()) bad(where_, "expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }
  std::string path(const std::string& key) const { return where_ + "." + key; }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return node_.at(key);
  }

  Section object(const std::string& key) { return Section(raw(key), path(key)); }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number()) bad(path(key), "expected a number");
    return v.get<double>();
  }

  Index integer(const std::string& key, Index fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_integer()) bad(path(key), "expected an integer");
    return v.get<Index>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_unsigned()) bad(path(key), "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) bad(path(key), "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) bad(path(key), "expected a string");
    return v.get<std::string>();
  }

  VectorXd vector(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) bad(path(key), "expected a non-empty array of numbers");
    VectorXd out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) bad(path(key), "expected a non-empty array of numbers");
      out(static_cast<Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  void check_unused() const {
    for (const auto& item : node_.items()) {
      if (!used_.count(item.key())) bad(where_, "unknown key '" + item.key() + "'");
    }
  }

 private:
  const json& node_;
  std::string where_;
  std::set<std::string> used_;
};

// Converts library parse errors into messages that carry the JSON path.
template <typename F>
auto parse_enum(const std::string& where, const std::string& text, F parse) {
  try {
    return parse(text);
  } catch (const Error& e) {
    bad(where, e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

NoiseSpec parse_noise(Section s, std::uint64_t default_seed) {
  NoiseSpec n;
  n.mode = parse_enum(s.path("mode"), s.string("mode", "none"), parse_noise_mode);
  n.sigma_phi = s.number("sigma_phi", 0.0);
  n.sigma_j = s.number("sigma_j", 0.0);
  n.seed = s.unsigned_integer("seed", default_seed);
  s.check_unused();
  try {
    n.validate();
  } catch (const Error& e) {
    bad(s.path("mode"), e.what());
  }
  return n;
}

ELoretaConfig parse_eloreta(Section s) {
  ELoretaConfig cfg;
  cfg.tol = s.number("tol", cfg.tol);
  cfg.max_iters = static_cast<int>(s.integer("max_iters", cfg.max_iters));
  cfg.relaxation = s.number("relaxation", cfg.relaxation);
  cfg.rank_policy.relative_epsilon = s.number("rank_epsilon", cfg.rank_policy.relative_epsilon);
  s.check_unused();
  return cfg;
}

MethodSpec parse_method(Section s, std::uint64_t seed) {
  MethodSpec m;
  if (!s.has("kind")) bad(s.path("kind"), "missing");
  m.kind = parse_enum(s.path("kind"), s.string("kind", ""), parse_method_kind);
  if (s.has("alpha")) {
    const json& a = s.raw("alpha");
    if (a.is_string() && a.get<std::string>() == "default") {
      m.use_default_alpha = true;
    } else if (a.is_number() && a.get<double>() >= 0.0) {
      m.alpha = a.get<double>();
    } else {
      bad(s.path("alpha"), "expected a nonnegative number or \"default\"");
    }
  }
  m.depth_exponent = s.number("depth_exponent", m.depth_exponent);
  m.sigma_phi = s.number("sigma_phi", m.sigma_phi);
  m.sigma_j = s.number("sigma_j", m.sigma_j);
  m.orientation = parse_enum(s.path("orientation"), s.string("orientation", "free"), parse_orientation);
  m.label = s.string("label", "");
  if (s.has("eloreta")) m.eloreta = parse_eloreta(s.object("eloreta"));
  if (s.has("adaptive")) {
    Section a = s.object("adaptive");
    m.adaptive.variant = parse_enum(a.path("variant"), a.string("variant", "inverse-covariance"),
                                    parse_adaptive_variant);
    m.adaptive.n_samples = a.integer("n_samples", 0);
    m.adaptive.source_voxel = a.integer("source_voxel", 0);
    if (a.has("noise")) m.adaptive.noise = parse_noise(a.object("noise"), seed);
    a.check_unused();
  }
  s.check_unused();
  return m;
}

MomentPolicy parse_moments(Section s, std::uint64_t seed) {
  MomentPolicy p;
  const std::string kind = s.string("policy", "canonical-plus-random");
  if (kind == "canonical-axes") p.kind = MomentPolicyKind::canonical_axes;
  else if (kind == "random") p.kind = MomentPolicyKind::random;
  else if (kind == "fixed") p.kind = MomentPolicyKind::fixed;
  else if (kind == "canonical-plus-random") p.kind = MomentPolicyKind::canonical_plus_random;
  else bad(s.path("policy"), "unknown moment policy '" + kind + "'");
  p.seed = s.unsigned_integer("seed", seed);
  p.count = s.integer("count", p.count);
  if (s.has("fixed")) p.fixed = s.vector("fixed");
  if (p.kind == MomentPolicyKind::fixed && p.fixed.size() == 0) bad(s.path("fixed"), "required for the fixed policy");
  s.check_unused();
  return p;
}

Evaluation parse_evaluation(const std::string& where, const std::string& text) {
  if (text == "noiseless") return Evaluation::noiseless;
  if (text == "expected-power") return Evaluation::expected_power;
  if (text == "monte-carlo") return Evaluation::monte_carlo;
  bad(where, "unknown evaluation '" + text + "'");
}

}  // namespace

const char* to_string(ForwardModel m) noexcept {
  switch (m) {
    case ForwardModel::infinite: return "infinite";
    case ForwardModel::sphere: return "sphere";
    case ForwardModel::tangential: return "tangential";
  }
  return "sphere";
}

std::vector<SweepConfig> RunConfig::sweep_configs() const {
  std::vector<SweepConfig> out;
  for (const MethodSpec& m : sweep.methods) {
    SweepConfig c;
    c.method = m;
    c.moments = sweep.moments;
    c.noise = sweep.noise;
    c.evaluation = sweep.evaluation;
    c.n_trials = sweep.n_trials;
    c.structured_biological_noise = sweep.structured_biological_noise;
    out.push_back(std::move(c));
  }
  return out;
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir,
                           std::optional<std::uint64_t> seed_override) {
  Section root(doc, "$");
  RunConfig cfg;
  cfg.base_dir = base_dir;
  cfg.seed = root.unsigned_integer("seed", 0);
  if (seed_override) cfg.seed = *seed_override;

  if (root.has("geometry")) {
    Section g = root.object("geometry");
    if (g.has("montage")) {
      Section m = g.object("montage");
      if (m.has("file")) cfg.montage.file = resolve(base_dir, m.string("file", ""));
      cfg.montage.electrodes = m.integer("electrodes", cfg.montage.electrodes);
      cfg.montage.radius = m.number("radius", cfg.montage.radius);
      cfg.montage.cap_angle = m.number("cap_angle", cfg.montage.cap_angle);
      m.check_unused();
    }
    if (g.has("sources")) {
      Section s = g.object("sources");
      if (s.has("file")) cfg.grid.file = resolve(base_dir, s.string("file", ""));
      cfg.grid.radius = s.number("radius", cfg.grid.radius);
      cfg.grid.spacing = s.number("spacing", cfg.grid.spacing);
      cfg.grid.max_norm_fraction = s.number("max_norm_fraction", cfg.grid.max_norm_fraction);
      cfg.grid.radial_normals = s.boolean("radial_normals", cfg.grid.radial_normals);
      cfg.grid.prune_origin = s.boolean("prune_origin", cfg.grid.prune_origin);
      s.check_unused();
    }
    g.check_unused();
  }

  if (root.has("forward")) {
    Section f = root.object("forward");
    const std::string model = f.string("model", "sphere");
    if (model == "infinite") cfg.forward.model = ForwardModel::infinite;
    else if (model == "sphere") cfg.forward.model = ForwardModel::sphere;
    else if (model == "tangential") cfg.forward.model = ForwardModel::tangential;
    else bad(f.path("model"), "unknown model '" + model + "' (infinite, sphere, tangential)");
    cfg.forward.sigma = f.number("sigma", cfg.forward.sigma);
    if (!(cfg.forward.sigma > 0.0)) bad(f.path("sigma"), "conductivity must be positive");
    if (f.has("leadfield")) cfg.forward.leadfield = resolve(base_dir, f.string("leadfield", ""));
    f.check_unused();
  }

  if (root.has("method") && root.has("methods")) bad("$", "give either 'method' or 'methods', not both");
  if (root.has("method")) cfg.sweep.methods.push_back(parse_method(root.object("method"), cfg.seed));
  if (root.has("methods")) {
    const json& list = root.raw("methods");
    if (!list.is_array() || list.empty()) bad("$.methods", "expected a non-empty array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      cfg.sweep.methods.push_back(parse_method(Section(list[i], "$.methods[" + std::to_string(i) + "]"), cfg.seed));
    }
  }

  cfg.sweep.moments.seed = cfg.seed;
  cfg.sweep.noise.seed = cfg.seed;
  if (root.has("sweep")) {
    Section s = root.object("sweep");
    if (s.has("moments")) cfg.sweep.moments = parse_moments(s.object("moments"), cfg.seed);
    if (s.has("noise")) cfg.sweep.noise = parse_noise(s.object("noise"), cfg.seed);
    cfg.sweep.evaluation = parse_evaluation(s.path("evaluation"), s.string("evaluation", "noiseless"));
    cfg.sweep.n_trials = s.integer("n_trials", 1);
    cfg.sweep.structured_biological_noise = s.boolean("structured_biological_noise", false);
    if (s.has("expect_fraction_exact")) {
      const double f = s.number("expect_fraction_exact", 1.0);
      if (!(f >= 0.0 && f <= 1.0)) bad(s.path("expect_fraction_exact"), "must lie in [0, 1]");
      cfg.sweep.expect_fraction_exact = f;
    }
    s.check_unused();
  }

  cfg.simulate.noise.seed = cfg.seed;
  if (root.has("simulate")) {
    Section s = root.object("simulate");
    cfg.simulate.voxel = s.integer("voxel", 0);
    if (s.has("moment")) cfg.simulate.moment = s.vector("moment");
    if (s.has("noise")) cfg.simulate.noise = parse_noise(s.object("noise"), cfg.seed);
    s.check_unused();
  }

  if (root.has("solve")) {
    Section s = root.object("solve");
    if (s.has("measurement")) cfg.measurement = resolve(base_dir, s.string("measurement", ""));
    s.check_unused();
  }

  if (root.has("output")) {
    Section o = root.object("output");
    // Outputs are relative to the working directory, inputs to the config file.
    cfg.output = o.string("directory", cfg.output.string());
    o.check_unused();
  }

  root.check_unused();
  return cfg;
}

RunConfig load_run_config(const std::optional<fs::path>& path, std::optional<std::uint64_t> seed_override) {
  if (!path) return parse_run_config(json::object(), fs::current_path(), seed_override);
  std::ifstream in(*path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path->string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::configuration, path->string() + ": " + e.what());
  }
  fs::path base = path->parent_path();
  if (base.empty()) base = ".";
  return parse_run_config(doc, base, seed_override);
}

namespace {

std::vector<Index> origin_voxels(const SourceSpace& s) {
  std::vector<Index> out;
  for (Index j = 0; j < s.size(); ++j)
    if (s.positions[j].norm() == 0.0) out.push_back(j);
  return out;
}

SensorMontage load_montage(const RunConfig& cfg) {
  SensorMontage m = cfg.montage.file
                        ? io::montage_from_matrix(io::read_matrix_file(*cfg.montage.file))
                        : montage_fibonacci_cap(cfg.montage.electrodes, cfg.montage.radius, cfg.montage.cap_angle);
  m.validate(false);
  if (m.size() < kMinElectrodes) {
    std::cerr << "warning: " << m.size() << " electrodes is below the recommended " << kMinElectrodes << "\n";
  }
  return m;
}

}  // namespace

Problem load_problem(const RunConfig& cfg) {
  Problem p;
  if (cfg.grid.file) {
    p.sources = io::sources_from_matrix(io::read_matrix_file(*cfg.grid.file));
  } else {
    p.sources = sources_regular_grid(cfg.grid.radius, cfg.grid.spacing, cfg.grid.max_norm_fraction);
  }
  if (cfg.grid.radial_normals && !p.sources.has_normals()) p.sources = with_radial_normals(p.sources);
  if (cfg.grid.prune_origin) p.sources = prune_voxels(p.sources, origin_voxels(p.sources));

  if (cfg.forward.leadfield) {
    p.k.matrix = io::read_matrix_file(*cfg.forward.leadfield);
    fs::path manifest_path = *cfg.forward.leadfield;
    manifest_path.replace_extension(".json");
    if (fs::exists(manifest_path)) {
      std::ifstream in(manifest_path);
      try {
        p.manifest = json::parse(in);
        p.k.block_size = p.manifest.value("block_size", Index{3});
        p.k.average_referenced = p.manifest.value("average_referenced", false);
        p.k.modality = parse_modality(p.manifest.value("modality", std::string("eeg")));
      } catch (const json::exception& e) {
        throw Error(ErrorKind::configuration, manifest_path.string() + ": " + e.what());
      }
      if (p.manifest.value("rows", p.k.matrix.rows()) != p.k.matrix.rows() ||
          p.manifest.value("cols", p.k.matrix.cols()) != p.k.matrix.cols()) {
        throw Error(ErrorKind::dimension, manifest_path.string() + ": dimensions disagree with " +
                                              cfg.forward.leadfield->string());
      }
    }
    p.k.validate();
    if (cfg.montage.file) {
      p.montage = load_montage(cfg);
      if (p.montage.size() != p.k.sensors()) {
        throw Error(ErrorKind::dimension, cfg.montage.file->string() + ": electrode count differs from the lead field");
      }
    }
    if (p.k.voxels() != p.sources.size()) {
      std::ostringstream msg;
      msg << cfg.forward.leadfield->string() << ": " << p.k.voxels()
          << " voxels but the source space has " << p.sources.size();
      throw Error(ErrorKind::dimension, msg.str());
    }
    if (p.k.modality == Modality::eeg && !p.k.average_referenced) p.k = average_reference(p.k);
  } else {
    p.montage = load_montage(cfg);
    switch (cfg.forward.model) {
      case ForwardModel::infinite:
        p.k = leadfield_infinite_medium(p.montage, p.sources, cfg.forward.sigma);
        break;
      case ForwardModel::sphere:
        p.k = leadfield_sphere_in_air(p.montage, p.sources, cfg.forward.sigma);
        break;
      case ForwardModel::tangential:
        p.k = leadfield_tangential_surrogate(p.montage, p.sources, cfg.forward.sigma);
        break;
    }
    if (p.k.modality == Modality::eeg) p.k = average_reference(p.k);
  }

  p.manifest = {{"rows", p.k.matrix.rows()},
                {"cols", p.k.matrix.cols()},
                {"voxels", p.k.voxels()},
                {"block_size", p.k.block_size},
                {"model", cfg.forward.leadfield ? std::string("file") : to_string(cfg.forward.model)},
                {"sigma", cfg.forward.sigma},
                {"modality", to_string(p.k.modality)},
                {"average_referenced", p.k.average_referenced}};
  return p;
}

}  // namespace exactloc::cli
