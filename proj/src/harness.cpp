#include "exactloc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "exactloc/error.hpp"

namespace exactloc {

namespace {

using nlohmann::json;

std::string format_number(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

Rng case_rng(std::uint64_t seed, Index a, Index b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

// Second trace form of the expected power: for each voxel keeps
// B_i = K_i^T C, G_i = (K_i^T C K_i)^+ and the constant noise term.
struct ExpectedPowerModel {
  Index block_size = 3;
  MatrixXd b;
  std::vector<MatrixXd> g;
  VectorXd noise_term;

  ExpectedPowerModel(const LeadField& gain, const FamilyParamC& c, const MatrixXd& noise_cov,
                     const RankPolicy& policy) {
    if (c.matrix.rows() != gain.sensors() || noise_cov.rows() != gain.sensors()) {
      throw Error(ErrorKind::dimension, "expected-power inputs disagree on sensor count");
    }
    block_size = gain.block_size;
    const Index d = block_size;
    b = gain.matrix.transpose() * c.matrix;
    g.reserve(static_cast<std::size_t>(gain.voxels()));
    noise_term.resize(gain.voxels());
    for (Index i = 0; i < gain.voxels(); ++i) {
      const auto bi = b.middleRows(i * d, d);
      g.push_back(pseudo_inverse(symmetrized(bi * gain.block(i)), policy));
      noise_term(i) = (g.back() * (bi * noise_cov * bi.transpose())).trace();
    }
  }

  VectorXd evaluate(const VectorXd& signal) const {
    const VectorXd bs = b * signal;
    VectorXd out(noise_term.size());
    for (Index i = 0; i < out.size(); ++i) {
      const auto v = bs.segment(i * block_size, block_size);
      out(i) = v.dot(g[static_cast<std::size_t>(i)] * v) + noise_term(i);
    }
    return out;
  }
};

LocalizationReport empty_report(const PreparedMethod& prepared, const SourceSpace& sources) {
  if (sources.size() != prepared.gain.voxels()) {
    throw Error(ErrorKind::dimension, "source space and lead field voxel counts differ");
  }
  LocalizationReport report;
  report.method = prepared.name;
  report.solver = prepared.solver;
  report.warnings = prepared.warnings;
  report.voxel_bins = depth_bins(sources);
  return report;
}

CaseRecord make_record(const SourceSpace& sources, Index j, Index moment_id, const VectorXd& moment,
                       const VectorXd& power) {
  const ArgmaxResult best = strict_argmax(power);
  CaseRecord rec;
  rec.true_voxel = j;
  rec.moment_id = moment_id;
  rec.moment = moment;
  rec.argmax_voxel = best.index;
  rec.tie = best.tie;
  rec.error_m = (sources.positions[j] - sources.positions[best.index]).norm();
  return rec;
}

json solver_json(const FixedPointReport& r) {
  json out;
  out["iterations"] = r.iterations;
  out["final_delta"] = r.final_delta;
  out["residual"] = r.residual;
  out["converged"] = r.converged;
  out["relaxation"] = r.relaxation;
  return out;
}

json aggregates_json(const std::string& method, const ReportAggregates& a) {
  json out;
  out["method"] = method;
  out["cases"] = a.cases;
  out["max_error_m"] = a.max_error;
  out["mean_error_m"] = a.mean_error;
  out["fraction_exact"] = a.fraction_exact;
  out["ties"] = a.ties;
  json bins = json::array();
  for (int b = 0; b < kDepthBins; ++b) {
    bins.push_back({{"bin", b}, {"cases", a.bin_cases[b]}, {"mean_error_m", a.bin_mean_error[b]}});
  }
  out["depth_bins"] = bins;
  if (a.trial_fraction_exact) out["trial_fraction_exact"] = *a.trial_fraction_exact;
  return out;
}

}  // namespace

MethodKind parse_method_kind(const std::string& text) {
  if (text == "min-norm") return MethodKind::min_norm;
  if (text == "depth-weighted-mn") return MethodKind::depth_weighted_mn;
  if (text == "sloreta") return MethodKind::sloreta;
  if (text == "sloreta-noise-matched") return MethodKind::sloreta_noise_matched;
  if (text == "eloreta") return MethodKind::eloreta;
  if (text == "adaptive") return MethodKind::adaptive;
  throw Error(ErrorKind::configuration, "unknown method '" + text + "'");
}

const char* to_string(MethodKind kind) noexcept {
  switch (kind) {
    case MethodKind::min_norm: return "min-norm";
    case MethodKind::depth_weighted_mn: return "depth-weighted-mn";
    case MethodKind::sloreta: return "sloreta";
    case MethodKind::sloreta_noise_matched: return "sloreta-noise-matched";
    case MethodKind::eloreta: return "eloreta";
    case MethodKind::adaptive: return "adaptive";
  }
  return "unknown";
}

std::string MethodSpec::name() const {
  if (!label.empty()) return label;
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case MethodKind::depth_weighted_mn: out << "(p=" << depth_exponent << ")"; break;
    case MethodKind::sloreta_noise_matched:
      out << "(sigma_phi=" << sigma_phi << ",sigma_j=" << sigma_j << ")";
      break;
    case MethodKind::adaptive: out << "(" << to_string(adaptive.variant) << ")"; break;
    default:
      if (use_default_alpha) out << "(alpha=default)";
      else out << "(alpha=" << alpha << ")";
  }
  if (orientation == Orientation::fixed) out << "[fixed]";
  return out.str();
}

std::vector<VectorXd> MomentPolicy::moments_for(Index j, Index block_size) const {
  std::vector<VectorXd> out;
  if (kind == MomentPolicyKind::fixed) {
    if (fixed.size() != block_size) throw Error(ErrorKind::dimension, "fixed moment size differs from block size");
    if (fixed.isZero(0.0)) throw Error(ErrorKind::input, "fixed moment must be non-zero");
    out.push_back(fixed);
    return out;
  }
  if (kind == MomentPolicyKind::canonical_axes || kind == MomentPolicyKind::canonical_plus_random) {
    for (Index a = 0; a < block_size; ++a) out.push_back(VectorXd::Unit(block_size, a));
  }
  if (kind == MomentPolicyKind::random || kind == MomentPolicyKind::canonical_plus_random) {
    Rng rng = case_rng(seed, j, -1);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index c = 0; c < count; ++c) {
      VectorXd v(block_size);
      do {
        for (Index a = 0; a < block_size; ++a) v(a) = normal(rng);
      } while (v.norm() < 1e-12);
      out.push_back(v.normalized());
    }
  }
  return out;
}

void SweepConfig::validate() const {
  if (evaluation == Evaluation::monte_carlo && n_trials < 1) {
    throw Error(ErrorKind::configuration, "monte-carlo evaluation needs n_trials >= 1");
  }
  if ((moments.kind == MomentPolicyKind::random ||
       moments.kind == MomentPolicyKind::canonical_plus_random) &&
      moments.count < 1) {
    throw Error(ErrorKind::configuration, "random moment policy needs count >= 1");
  }
  noise.validate();
}

std::vector<int> depth_bins(const SourceSpace& sources, int bins) {
  double rmax = 0.0;
  for (const auto& r : sources.positions) rmax = std::max(rmax, r.norm());
  std::vector<int> out;
  out.reserve(sources.positions.size());
  for (const auto& r : sources.positions) {
    int b = rmax > 0.0 ? static_cast<int>(std::floor(bins * r.norm() / rmax)) : 0;
    out.push_back(std::clamp(b, 0, bins - 1));
  }
  return out;
}

ArgmaxResult strict_argmax(const VectorXd& power) {
  if (power.size() == 0) throw Error(ErrorKind::input, "empty power map");
  ArgmaxResult out;
  for (Index i = 1; i < power.size(); ++i) {
    if (power(i) > power(out.index)) out.index = i;
  }
  const double top = power(out.index);
  for (Index i = 0; i < power.size(); ++i) {
    if (i == out.index) continue;
    if (top - power(i) <= kTieThreshold * std::abs(top)) {
      out.tie = true;
      break;
    }
  }
  return out;
}

PreparedMethod prepare_method(const LeadField& k, const SourceSpace& sources, const MethodSpec& spec) {
  k.validate();
  PreparedMethod out;
  out.name = spec.name();
  out.gain = spec.orientation == Orientation::fixed ? orient(k, sources) : k;
  const LeadField& gain = out.gain;
  const double alpha = spec.use_default_alpha ? default_alpha(gain) : spec.alpha;

  switch (spec.kind) {
    case MethodKind::min_norm:
      out.op = wmn_operator(gain, BlockWeights::identity(gain.voxels(), gain.block_size), alpha);
      break;
    case MethodKind::depth_weighted_mn:
      out.op = wmn_operator(gain, depth_weights(gain, spec.depth_exponent), alpha);
      break;
    case MethodKind::sloreta:
      out.c = c_sloreta(gain, alpha);
      out.op = family_operator(gain, *out.c);
      break;
    case MethodKind::sloreta_noise_matched:
      out.c = c_sloreta_noise_matched(gain, spec.sigma_phi, spec.sigma_j);
      out.op = family_operator(gain, *out.c);
      break;
    case MethodKind::eloreta: {
      ELoretaConfig cfg = spec.eloreta;
      cfg.alpha = alpha;
      cfg.modality = gain.modality;
      cfg.orientation = spec.orientation;
      ELoretaSolution sol = solve_eloreta(gain, cfg);
      if (!sol.report.converged) {
        std::ostringstream msg;
        msg << "eLORETA did not converge in " << sol.report.iterations
            << " iterations (delta " << sol.report.final_delta << ")";
        out.warnings.push_back(msg.str());
      }
      out.op = eloreta_operator(gain, sol.weights, cfg);
      out.c = eloreta_family_c(gain, sol.weights, cfg);
      out.weights = std::move(sol.weights);
      out.solver = std::move(sol.report);
      break;
    }
    case MethodKind::adaptive: {
      const AdaptiveTraining& t = spec.adaptive;
      const Index n = t.n_samples > 0 ? t.n_samples : 50 * gain.sensors();
      if (t.source_voxel < 0 || t.source_voxel >= gain.voxels()) {
        throw Error(ErrorKind::configuration, "adaptive source voxel out of range");
      }
      Rng rng(t.noise.seed);
      NoiseSampler sampler(gain, t.noise);
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<Measurement> samples;
      samples.reserve(static_cast<std::size_t>(n));
      for (Index s = 0; s < n; ++s) {
        VectorXd moment(gain.block_size);
        for (Index a = 0; a < moment.size(); ++a) moment(a) = normal(rng);
        Measurement m;
        m.phi = gain.block(t.source_voxel) * moment;
        if (t.noise.mode != NoiseMode::none) m.phi += sampler.draw(rng);
        m.average_referenced = gain.average_referenced;
        samples.push_back(std::move(m));
      }
      out.c = c_adaptive(samples, t.variant, gain.modality);
      if (out.c->warning) out.warnings.push_back(*out.c->warning);
      out.op = family_operator(gain, *out.c);
      break;
    }
  }
  return out;
}

VectorXd expected_power_map(const LeadField& gain, const FamilyParamC& c, const VectorXd& signal,
                            const MatrixXd& noise_cov, const RankPolicy& policy) {
  return ExpectedPowerModel(gain, c, noise_cov, policy).evaluate(signal);
}

MatrixXd sweep_noise_covariance(const PreparedMethod& prepared, double sigma_phi, double sigma_j) {
  const LeadField& gain = prepared.gain;
  NoiseSpec noise;
  noise.sigma_phi = sigma_phi;
  noise.sigma_j = sigma_j;
  noise.mode = sigma_phi > 0.0 ? (sigma_j > 0.0 ? NoiseMode::both : NoiseMode::measurement)
                               : (sigma_j > 0.0 ? NoiseMode::biological : NoiseMode::none);
  if (prepared.weights) noise.structured_weights = prepared.weights;
  return noise_covariance(gain, noise);
}

MonteCarloPower monte_carlo_power(const PreparedMethod& prepared, const VectorXd& signal,
                                  const NoiseSpec& noise, Index n_trials, Rng& rng) {
  if (n_trials < 1) throw Error(ErrorKind::input, "n_trials must be at least 1");
  if (signal.size() != prepared.gain.sensors()) throw Error(ErrorKind::dimension, "signal size differs from sensor count");
  const NoiseSampler sampler(prepared.gain, noise);
  MonteCarloPower out;
  out.mean_power = VectorXd::Zero(prepared.op.voxels());
  out.trial_argmax.reserve(static_cast<std::size_t>(n_trials));
  for (Index t = 0; t < n_trials; ++t) {
    VectorXd phi = signal;
    if (noise.mode != NoiseMode::none) phi += sampler.draw(rng);
    const VectorXd power = power_map(prepared.op, phi);
    out.trial_argmax.push_back(strict_argmax(power).index);
    out.mean_power += power;
  }
  out.mean_power /= static_cast<double>(n_trials);
  return out;
}

LocalizationReport sweep_noiseless(const PreparedMethod& prepared, const SourceSpace& sources,
                                   const SweepConfig& cfg) {
  cfg.validate();
  LocalizationReport report = empty_report(prepared, sources);
  const LeadField& gain = prepared.gain;
  for (Index j = 0; j < gain.voxels(); ++j) {
    const auto moments = cfg.moments.moments_for(j, gain.block_size);
    for (std::size_t m = 0; m < moments.size(); ++m) {
      const VectorXd phi = gain.block(j) * moments[m];
      report.records.push_back(
          make_record(sources, j, static_cast<Index>(m), moments[m], power_map(prepared.op, phi)));
    }
  }
  report.aggregates = report.recompute();
  return report;
}

LocalizationReport sweep_expected_power(const PreparedMethod& prepared, const SourceSpace& sources,
                                        const SweepConfig& cfg, double sigma_phi, double sigma_j) {
  cfg.validate();
  if (!prepared.c) {
    throw Error(ErrorKind::input, "expected-power sweeps need a family method with a parameter matrix C; '" +
                                      prepared.name + "' has none");
  }
  if (!(sigma_phi >= 0.0) || !(sigma_j >= 0.0)) throw Error(ErrorKind::input, "noise variances must be nonnegative");
  LocalizationReport report = empty_report(prepared, sources);
  const LeadField& gain = prepared.gain;
  const ExpectedPowerModel model(gain, *prepared.c, sweep_noise_covariance(prepared, sigma_phi, sigma_j),
                                 RankPolicy{});
  for (Index j = 0; j < gain.voxels(); ++j) {
    const auto moments = cfg.moments.moments_for(j, gain.block_size);
    for (std::size_t m = 0; m < moments.size(); ++m) {
      const VectorXd signal = gain.block(j) * moments[m];
      report.records.push_back(
          make_record(sources, j, static_cast<Index>(m), moments[m], model.evaluate(signal)));
    }
  }
  report.aggregates = report.recompute();
  return report;
}

LocalizationReport sweep_monte_carlo(const PreparedMethod& prepared, const SourceSpace& sources,
                                     const SweepConfig& cfg) {
  cfg.validate();
  LocalizationReport report = empty_report(prepared, sources);
  const LeadField& gain = prepared.gain;
  NoiseSpec noise = cfg.noise;
  if (cfg.structured_biological_noise) {
    if (!prepared.weights) throw Error(ErrorKind::input, "structured biological noise needs eLORETA weights");
    noise.structured_weights = prepared.weights;
  }
  for (Index j = 0; j < gain.voxels(); ++j) {
    const auto moments = cfg.moments.moments_for(j, gain.block_size);
    for (std::size_t m = 0; m < moments.size(); ++m) {
      Rng rng = case_rng(noise.seed, j, static_cast<Index>(m));
      const VectorXd signal = gain.block(j) * moments[m];
      MonteCarloPower mc = monte_carlo_power(prepared, signal, noise, cfg.n_trials, rng);
      CaseRecord rec = make_record(sources, j, static_cast<Index>(m), moments[m], mc.mean_power);
      rec.trial_argmax = std::move(mc.trial_argmax);
      report.records.push_back(std::move(rec));
    }
  }
  report.aggregates = report.recompute();
  return report;
}

LocalizationReport sweep_noiseless(const LeadField& k, const SourceSpace& sources, const SweepConfig& cfg) {
  return sweep_noiseless(prepare_method(k, sources, cfg.method), sources, cfg);
}

LocalizationReport sweep_expected_power(const LeadField& k, const SourceSpace& sources,
                                        const SweepConfig& cfg, double sigma_phi, double sigma_j) {
  return sweep_expected_power(prepare_method(k, sources, cfg.method), sources, cfg, sigma_phi, sigma_j);
}

LocalizationReport sweep_monte_carlo(const LeadField& k, const SourceSpace& sources, const SweepConfig& cfg) {
  return sweep_monte_carlo(prepare_method(k, sources, cfg.method), sources, cfg);
}

LocalizationReport run_sweep(const LeadField& k, const SourceSpace& sources, const SweepConfig& cfg) {
  switch (cfg.evaluation) {
    case Evaluation::noiseless: return sweep_noiseless(k, sources, cfg);
    case Evaluation::expected_power:
      return sweep_expected_power(k, sources, cfg, cfg.noise.sigma_phi, cfg.noise.sigma_j);
    case Evaluation::monte_carlo: return sweep_monte_carlo(k, sources, cfg);
  }
  throw Error(ErrorKind::configuration, "unknown evaluation mode");
}

ReportAggregates LocalizationReport::recompute() const {
  ReportAggregates a;
  a.cases = static_cast<Index>(records.size());
  if (records.empty()) return a;
  double sum = 0.0;
  Index exact = 0;
  Index trials = 0;
  Index trial_hits = 0;
  std::array<double, kDepthBins> bin_sum{};
  for (const CaseRecord& r : records) {
    sum += r.error_m;
    a.max_error = std::max(a.max_error, r.error_m);
    if (r.exact()) ++exact;
    if (r.tie) ++a.ties;
    if (!voxel_bins.empty()) {
      const int b = voxel_bins[static_cast<std::size_t>(r.true_voxel)];
      bin_sum[b] += r.error_m;
      ++a.bin_cases[b];
    }
    for (Index t : r.trial_argmax) {
      ++trials;
      if (t == r.true_voxel) ++trial_hits;
    }
  }
  a.mean_error = sum / static_cast<double>(a.cases);
  a.fraction_exact = static_cast<double>(exact) / static_cast<double>(a.cases);
  for (int b = 0; b < kDepthBins; ++b) {
    a.bin_mean_error[b] = a.bin_cases[b] > 0 ? bin_sum[b] / static_cast<double>(a.bin_cases[b]) : 0.0;
  }
  if (trials > 0) a.trial_fraction_exact = static_cast<double>(trial_hits) / static_cast<double>(trials);
  return a;
}

std::string LocalizationReport::to_csv(bool with_header) const {
  std::ostringstream out;
  if (with_header) out << "method,true_voxel,moment_id,argmax_voxel,error_m,tie\n";
  for (const CaseRecord& r : records) {
    out << method << ',' << r.true_voxel << ',' << r.moment_id << ',' << r.argmax_voxel << ','
        << format_number(r.error_m) << ',' << (r.tie ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string LocalizationReport::summary_json() const {
  json out = aggregates_json(method, aggregates);
  if (solver) out["solver"] = solver_json(*solver);
  out["warnings"] = warnings;
  return out.dump(2) + "\n";
}

std::string ComparisonTable::to_csv() const {
  std::ostringstream out;
  out << "method,cases,max_error_m,mean_error_m,fraction_exact,ties";
  for (int b = 0; b < kDepthBins; ++b) out << ",bin" << b << "_mean_error_m";
  out << '\n';
  for (const auto& r : reports) {
    const ReportAggregates& a = r.aggregates;
    out << r.method << ',' << a.cases << ',' << format_number(a.max_error) << ','
        << format_number(a.mean_error) << ',' << format_number(a.fraction_exact) << ',' << a.ties;
    for (int b = 0; b < kDepthBins; ++b) out << ',' << format_number(a.bin_mean_error[b]);
    out << '\n';
  }
  return out.str();
}

std::string ComparisonTable::to_json() const {
  json rows = json::array();
  for (const auto& r : reports) {
    json row = aggregates_json(r.method, r.aggregates);
    if (r.solver) row["solver"] = solver_json(*r.solver);
    row["warnings"] = r.warnings;
    rows.push_back(std::move(row));
  }
  return json{{"methods", rows}}.dump(2) + "\n";
}

ComparisonTable compare_methods(const LeadField& k, const SourceSpace& sources,
                                const std::vector<SweepConfig>& configs) {
  if (configs.empty()) throw Error(ErrorKind::configuration, "compare needs at least one method");
  ComparisonTable table;
  for (const SweepConfig& cfg : configs) table.reports.push_back(run_sweep(k, sources, cfg));
  return table;
}

}  // namespace exactloc
