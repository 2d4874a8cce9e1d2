// exactloc-cli: forward-model generation, simulation, solving and
// localization sweeps driven by a JSON run configuration.
//
// Exit codes: 0 success, 1 failed assertion or non-convergence,
// 2 usage, parse or input error.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "exactloc/error.hpp"
#include "exactloc/harness.hpp"
#include "exactloc/matrix_io.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace exactloc;
using exactloc::cli::Problem;
using exactloc::cli::RunConfig;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  bool quiet = false;
};

std::ostream& info(const Globals& g) {
  static std::ostringstream sink;
  sink.str("");
  return g.quiet ? static_cast<std::ostream&>(sink) : std::cout;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json noise_json(const NoiseSpec& n) {
  return {{"mode", to_string(n.mode)}, {"sigma_phi", n.sigma_phi}, {"sigma_j", n.sigma_j}, {"seed", n.seed}};
}

json solver_json(const FixedPointReport& r) {
  return {{"iterations", r.iterations},     {"final_delta", r.final_delta},
          {"residual", r.residual},         {"converged", r.converged},
          {"relaxation", r.relaxation},     {"delta_history", r.delta_history},
          {"block_ranks", r.block_ranks}};
}

Problem load_problem(const RunConfig& cfg, const Globals& g) {
  Problem p = cli::load_problem(cfg);
  info(g) << "lead field: " << p.k.sensors() << " sensors x " << p.k.voxels() << " voxels ("
          << p.manifest["model"].get<std::string>() << ", " << to_string(p.k.modality) << ")\n";
  return p;
}

fs::path output_dir(const RunConfig& cfg, const Globals& g) { return g.out ? *g.out : cfg.output; }

const MethodSpec& single_method(const RunConfig& cfg) {
  if (cfg.sweep.methods.size() != 1) {
    throw Error(ErrorKind::configuration, "this command needs exactly one entry in 'method'");
  }
  return cfg.sweep.methods.front();
}

// ---------------------------------------------------------------------------

int cmd_gen_forward(const Globals& g) {
  const RunConfig cfg = cli::load_run_config(g.config, g.seed);
  const Problem p = load_problem(cfg, g);
  const fs::path dir = output_dir(cfg, g);
  io::write_matrix_file(dir / "montage.txt", io::montage_to_matrix(p.montage));
  io::write_matrix_file(dir / "sources.txt", io::sources_to_matrix(p.sources));
  io::write_matrix_file(dir / "leadfield.txt", p.k.matrix);
  io::write_file_atomic(dir / "leadfield.json", dump(p.manifest));
  info(g) << "wrote " << (dir / "leadfield.txt").string() << "\n";
  return kExitOk;
}

struct SimulateArgs {
  std::optional<Index> voxel;
  std::vector<double> moment;
};

int cmd_simulate(const Globals& g, const SimulateArgs& args) {
  const RunConfig cfg = cli::load_run_config(g.config, g.seed);
  const Problem p = load_problem(cfg, g);
  const Index j = args.voxel.value_or(cfg.simulate.voxel);
  VectorXd moment;
  if (!args.moment.empty()) {
    moment = Eigen::Map<const VectorXd>(args.moment.data(), static_cast<Index>(args.moment.size()));
  } else if (cfg.simulate.moment) {
    moment = *cfg.simulate.moment;
  } else {
    moment = VectorXd::Unit(p.k.block_size, 0);
  }
  const Measurement m = simulate_point_source(p.k, j, moment, cfg.simulate.noise);

  const fs::path dir = output_dir(cfg, g);
  io::write_matrix_file(dir / "measurement.txt", m.phi);
  json manifest = {{"voxel", j},
                   {"moment", std::vector<double>(moment.data(), moment.data() + moment.size())},
                   {"noise", noise_json(cfg.simulate.noise)},
                   {"sensors", m.phi.size()},
                   {"average_referenced", m.average_referenced}};
  io::write_file_atomic(dir / "measurement.json", dump(manifest));
  info(g) << "wrote " << (dir / "measurement.txt").string() << " (voxel " << j << ")\n";
  return kExitOk;
}

int cmd_solve(const Globals& g, const std::optional<fs::path>& measurement_flag) {
  const RunConfig cfg = cli::load_run_config(g.config, g.seed);
  const std::optional<fs::path> mpath = measurement_flag ? measurement_flag : cfg.measurement;
  if (!mpath) throw Error(ErrorKind::configuration, "solve needs --measurement or solve.measurement");
  const MethodSpec& spec = single_method(cfg);
  const Problem p = load_problem(cfg, g);

  const MatrixXd raw = io::read_matrix_file(*mpath);
  if (raw.cols() != 1 || raw.rows() != p.k.sensors()) {
    std::ostringstream msg;
    msg << mpath->string() << ": measurement is " << raw.rows() << "x" << raw.cols() << ", expected "
        << p.k.sensors() << "x1";
    throw Error(ErrorKind::dimension, msg.str());
  }
  Measurement m;
  m.phi = raw.col(0);
  if (p.k.modality == Modality::eeg) m = average_reference(m);

  const PreparedMethod pm = prepare_method(p.k, p.sources, spec);
  const VoxelEstimate est = apply_operator(pm.op, m.phi);
  const Index d = est.block_size;
  MatrixXd per_voxel(pm.op.voxels(), d);
  for (Index i = 0; i < pm.op.voxels(); ++i) per_voxel.row(i) = est.voxel(i).transpose();

  const fs::path dir = output_dir(cfg, g);
  io::write_matrix_file(dir / "estimates.txt", per_voxel);
  io::write_matrix_file(dir / "power.txt", est.power);
  for (const auto& w : pm.warnings) std::cerr << "warning: " << w << "\n";

  const ArgmaxResult best = strict_argmax(est.power);
  info(g) << pm.name << ": power maximum at voxel " << best.index << (best.tie ? " (tie)" : "") << "\n";

  if (pm.weights) {
    io::write_matrix_file(dir / "weights.txt", pm.weights->blocks);
    io::write_file_atomic(dir / "eloreta_report.json", dump(solver_json(*pm.solver)));
    if (!pm.solver->converged) {
      std::cerr << "error: eLORETA did not converge (delta " << pm.solver->final_delta << " after "
                << pm.solver->iterations << " iterations)\n";
      return kExitFailed;
    }
  }
  return kExitOk;
}

void print_failures(const LocalizationReport& r) {
  int shown = 0;
  for (const CaseRecord& rec : r.records) {
    if (rec.exact()) continue;
    if (shown == 0) std::cerr << r.method << ": failing cases (first 10)\n";
    if (shown++ == 10) break;
    std::cerr << "  voxel " << rec.true_voxel << " moment " << rec.moment_id << " -> argmax "
              << rec.argmax_voxel << " error " << std::setprecision(6) << rec.error_m << " m"
              << (rec.tie ? " (tie)" : "") << "\n";
  }
}

int cmd_verify(const Globals& g) {
  const RunConfig cfg = cli::load_run_config(g.config, g.seed);
  if (cfg.sweep.methods.empty()) throw Error(ErrorKind::configuration, "verify needs 'method' or 'methods'");
  const Problem p = load_problem(cfg, g);

  std::string csv;
  json summaries = json::array();
  bool passed = true;
  bool header = true;
  for (const SweepConfig& sc : cfg.sweep_configs()) {
    const LocalizationReport r = run_sweep(p.k, p.sources, sc);
    csv += r.to_csv(header);
    header = false;
    json s = json::parse(r.summary_json());
    for (const auto& w : r.warnings) std::cerr << "warning: " << r.method << ": " << w << "\n";

    bool ok = true;
    if (cfg.sweep.expect_fraction_exact) {
      ok = r.aggregates.fraction_exact >= *cfg.sweep.expect_fraction_exact;
      s["expect_fraction_exact"] = *cfg.sweep.expect_fraction_exact;
    }
    if (r.solver && !r.solver->converged) ok = false;
    s["passed"] = ok;
    summaries.push_back(s);

    info(g) << r.method << ": cases " << r.aggregates.cases << ", fraction exact "
            << r.aggregates.fraction_exact << ", max error " << r.aggregates.max_error << " m, mean error "
            << r.aggregates.mean_error << " m" << (ok ? "" : "  FAILED") << "\n";
    if (!ok) {
      passed = false;
      print_failures(r);
      if (r.solver && !r.solver->converged) std::cerr << r.method << ": solver did not converge\n";
    }
  }

  const fs::path dir = output_dir(cfg, g);
  io::write_file_atomic(dir / "report.csv", csv);
  io::write_file_atomic(dir / "summary.json", dump({{"passed", passed}, {"reports", summaries}}));
  return passed ? kExitOk : kExitFailed;
}

int cmd_compare(const Globals& g) {
  const RunConfig cfg = cli::load_run_config(g.config, g.seed);
  if (cfg.sweep.methods.empty()) throw Error(ErrorKind::configuration, "compare needs 'methods'");
  const Problem p = load_problem(cfg, g);
  const ComparisonTable table = compare_methods(p.k, p.sources, cfg.sweep_configs());

  std::string cases;
  bool header = true;
  for (const auto& r : table.reports) {
    cases += r.to_csv(header);
    header = false;
  }
  const fs::path dir = output_dir(cfg, g);
  io::write_file_atomic(dir / "comparison.csv", table.to_csv());
  io::write_file_atomic(dir / "comparison.json", table.to_json());
  io::write_file_atomic(dir / "report.csv", cases);
  info(g) << table.to_csv();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact-localization EEG/MEG imaging: forward models, solvers and sweeps"};
  app.require_subcommand(1);
  Globals g;
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Override the configuration seed");
  auto* out_opt = app.add_option("--out", out_path, "Output directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  auto* gen = app.add_subcommand("gen-forward", "Write montage, source space and lead field");
  auto* sim = app.add_subcommand("simulate", "Simulate a point-source measurement");
  SimulateArgs sim_args;
  Index voxel = 0;
  auto* voxel_opt = sim->add_option("--voxel", voxel, "Source voxel index");
  sim->add_option("--moment", sim_args.moment, "Dipole moment, comma separated")->delimiter(',');
  auto* solve = app.add_subcommand("solve", "Apply one method to a measurement");
  std::string measurement;
  auto* measurement_opt = solve->add_option("--measurement", measurement, "Measurement matrix file")
                              ->check(CLI::ExistingFile);
  auto* verify = app.add_subcommand("verify", "Run localization sweeps and check exactness");
  auto* compare = app.add_subcommand("compare", "Compare several methods on one sweep");
  for (auto* sub : {gen, sim, solve, verify, compare}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (*config_opt) g.config = fs::path(config_path);
  if (*seed_opt) g.seed = seed;
  if (*out_opt) g.out = fs::path(out_path);
  if (*voxel_opt) sim_args.voxel = voxel;

  try {
    if (*gen) return cmd_gen_forward(g);
    if (*sim) return cmd_simulate(g, sim_args);
    if (*solve) return cmd_solve(g, *measurement_opt ? std::optional<fs::path>(measurement) : std::nullopt);
    if (*verify) return cmd_verify(g);
    if (*compare) return cmd_compare(g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::numeric ? kExitFailed : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
