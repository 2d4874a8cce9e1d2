#include <doctest.h>

#include "exactloc/eloreta.hpp"
#include "exactloc/error.hpp"
#include "oracles.hpp"

using namespace exactloc;

namespace {

SourceSpace without_origin(const SourceSpace& s) {
  std::vector<Index> drop;
  for (Index j = 0; j < s.size(); ++j)
    if (s.positions[j].norm() == 0.0) drop.push_back(j);
  return prune_voxels(s, drop);
}

struct Setup {
  SourceSpace sources;
  LeadField k;
};

const Setup& eeg() {
  static const Setup s = [] {
    Setup out;
    out.sources = with_radial_normals(sources_regular_grid(kDefaultHeadRadius, 0.025, 0.8));
    out.k = average_reference(leadfield_sphere_in_air(montage_fibonacci_cap(19), out.sources));
    return out;
  }();
  return s;
}

double max_weight_difference(const BlockWeights& a, const BlockWeights& b) {
  double worst = 0.0;
  for (Index j = 0; j < a.voxels(); ++j)
    worst = std::max(worst, oracle::rel_frob(a.block(j), b.block(j)));
  return worst;
}

bool localizes_every_voxel(const InverseOperator& t, const LeadField& gain) {
  for (Index j = 0; j < gain.voxels(); ++j) {
    for (Index c = 0; c < gain.block_size; ++c) {
      Index hit = 0;
      power_map(t, gain.block(j).col(c)).maxCoeff(&hit);
      if (hit != j) return false;
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("eloreta free orientation") {
  TEST_CASE("single voxel converges to the identity") {
    std::mt19937_64 rng(1);
    LeadField k;
    k.matrix = centering_matrix(6) * oracle::gaussian(6, 3, rng);
    k.average_referenced = true;
    const ELoretaSolution sol = eloreta_weights_free(k, ELoretaConfig{});
    CHECK(sol.report.converged);
    CHECK(oracle::rel_frob(sol.weights.block(0), MatrixXd::Identity(3, 3)) < 1e-8);
    CHECK(sol.report.residual < 1e-8);
  }

  TEST_CASE("fixed point and standardization") {
    const Setup& s = eeg();
    for (double alpha : {0.0, default_alpha(s.k)}) {
      ELoretaConfig cfg;
      cfg.alpha = alpha;
      const ELoretaSolution sol = eloreta_weights_free(s.k, cfg);
      CHECK(sol.report.converged);
      CHECK(sol.report.final_delta <= cfg.tol);
      CHECK(sol.report.residual < 1e-6);
      CHECK(fixed_point_residual(s.k, sol.weights, cfg) == doctest::Approx(sol.report.residual));
      for (Index r : sol.report.block_ranks) CHECK(r == 3);

      const SourceCovariance sigma = source_covariance(s.k, sol.weights, cfg, CovarianceMode::blocks_only);
      double worst = 0.0;
      for (Index j = 0; j < s.k.voxels(); ++j)
        worst = std::max(worst, (MatrixXd(sigma.diagonal_block(j)) - MatrixXd::Identity(3, 3)).norm());
      CHECK(worst < 1e-6);
    }
  }

  TEST_CASE("weights are symmetric positive definite") {
    const Setup& s = eeg();
    const ELoretaSolution sol = eloreta_weights_free(s.k, ELoretaConfig{});
    for (Index j = 0; j < s.k.voxels(); ++j) {
      const MatrixXd w = sol.weights.block(j);
      CHECK((w - w.transpose()).norm() <= 1e-12 * w.norm());
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(w);
      CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
  }

  TEST_CASE("noiseless sweep localizes every voxel and component") {
    const Setup& s = eeg();
    for (double alpha : {0.0, default_alpha(s.k)}) {
      ELoretaConfig cfg;
      cfg.alpha = alpha;
      const ELoretaSolution sol = eloreta_weights_free(s.k, cfg);
      CHECK(localizes_every_voxel(eloreta_operator(s.k, sol.weights, cfg), s.k));
    }
  }

  TEST_CASE("operator equals the family form with C = M") {
    const Setup& s = eeg();
    ELoretaConfig cfg;
    cfg.alpha = default_alpha(s.k);
    const ELoretaSolution sol = eloreta_weights_free(s.k, cfg);
    const InverseOperator direct = eloreta_operator(s.k, sol.weights, cfg);
    const FamilyParamC c = eloreta_family_c(s.k, sol.weights, cfg);
    CHECK(c.provenance == CProvenance::eloreta);
    CHECK_NOTHROW(c.validate());
    const InverseOperator family = family_operator(s.k, c);
    CHECK(oracle::rel_frob(direct.matrix, family.matrix) < 1e-8);
  }

  TEST_CASE("K T = H without regularization") {
    const Setup& s = eeg();
    const ELoretaConfig cfg;
    const ELoretaSolution sol = eloreta_weights_free(s.k, cfg);
    const InverseOperator t = eloreta_operator(s.k, sol.weights, cfg);
    CHECK(oracle::rel_frob(s.k.matrix * t.matrix, centering_matrix(19)) < 1e-8);
  }

  TEST_CASE("the same weights from two different starting points") {
    const Setup& s = eeg();
    ELoretaConfig cfg;
    cfg.tol = 1e-10;
    const ELoretaSolution a = eloreta_weights_free(s.k, cfg);

    std::mt19937_64 rng(44);
    BlockWeights start = BlockWeights::identity(s.k.voxels(), 3);
    for (Index j = 0; j < s.k.voxels(); ++j) {
      const MatrixXd g = oracle::gaussian(3, 3, rng);
      start.block(j) = 50.0 * (MatrixXd::Identity(3, 3) + 0.3 * g * g.transpose());
    }
    const ELoretaSolution b = eloreta_weights_free(s.k, cfg, &start);
    CHECK(a.report.converged);
    CHECK(b.report.converged);
    CHECK(max_weight_difference(a.weights, b.weights) < 1e-6);
  }

  TEST_CASE("under-relaxation reaches the same fixed point") {
    const Setup& s = eeg();
    ELoretaConfig cfg;
    cfg.tol = 1e-10;
    const ELoretaSolution plain = eloreta_weights_free(s.k, cfg);
    cfg.relaxation = 0.5;
    cfg.max_iters = 2000;
    const ELoretaSolution relaxed = eloreta_weights_free(s.k, cfg);
    CHECK(relaxed.report.converged);
    CHECK(relaxed.report.relaxation == 0.5);
    CHECK(relaxed.report.iterations > plain.report.iterations);
    CHECK(max_weight_difference(plain.weights, relaxed.weights) < 1e-6);
  }

  TEST_CASE("iteration cap is reported, not hidden") {
    const Setup& s = eeg();
    ELoretaConfig cfg;
    cfg.max_iters = 2;
    const ELoretaSolution sol = eloreta_weights_free(s.k, cfg);
    CHECK_FALSE(sol.report.converged);
    CHECK(sol.report.iterations == 2);
    CHECK(sol.report.delta_history.size() == 2);
    CHECK(sol.report.final_delta > cfg.tol);
  }

  TEST_CASE("standardization objectives along the iteration") {
    const Setup& s = eeg();
    ELoretaConfig cfg;
    cfg.track_objective = true;
    const ELoretaSolution sol = eloreta_weights_free(s.k, cfg);
    const auto& h = sol.report.objective_history;
    const auto& full = sol.report.full_objective_history;
    REQUIRE(h.size() == static_cast<std::size_t>(sol.report.iterations) + 1);
    REQUIRE(full.size() == h.size());

    // Diagonal-block part: large at W = I, zero at the fixed point.
    Index uphill = 0;
    for (std::size_t i = 1; i < h.size(); ++i)
      if (h[i] > h[i - 1] * (1.0 + 1e-12)) ++uphill;
    MESSAGE("block objective ", h.front(), " -> ", h.back(), ", uphill steps: ", uphill);
    CHECK(h.front() > h.back());
    CHECK(h.back() < 1e-10 * h.front());

    // Full-matrix norm: Sigma has rank N_E - 1 = 18 while its diagonal blocks
    // have total trace 3 N_V at the fixed point, so
    // ||I - Sigma||^2 >= (3 N_V)^2 / 18 - 3 N_V > ||I - Sigma(W = I)||^2 = 3 N_V - 18.
    const double n = 3.0 * static_cast<double>(s.k.voxels());
    MESSAGE("full objective ", full.front(), " -> ", full.back());
    CHECK(full.front() == doctest::Approx(n - 18.0).epsilon(1e-9));
    CHECK(full.back() >= n * n / 18.0 - n - 1e-6 * n);
  }
}

TEST_SUITE("eloreta fixed orientation") {
  TEST_CASE("scalar fixed point and standardization") {
    const Setup& s = eeg();
    const SourceSpace src = without_origin(s.sources);
    const LeadField k = average_reference(leadfield_sphere_in_air(montage_fibonacci_cap(19), src));
    ELoretaConfig cfg;
    cfg.orientation = Orientation::fixed;
    const ELoretaSolution sol = eloreta_weights_fixed(k, src, cfg);
    CHECK(sol.report.converged);
    CHECK(sol.weights.block_size() == 1);

    const LeadField kn = orient(k, src);
    const MatrixXd m = eloreta_gram_inverse(kn, sol.weights, cfg);
    for (Index j = 0; j < kn.voxels(); ++j) {
      const double w = sol.weights.blocks(j, 0);
      CHECK(w * w == doctest::Approx(kn.matrix.col(j).dot(m * kn.matrix.col(j))).epsilon(1e-7));
    }
    CHECK(localizes_every_voxel(eloreta_operator(kn, sol.weights, cfg), kn));
  }

  TEST_CASE("flipping normals leaves the weights unchanged") {
    const Setup& s = eeg();
    const SourceSpace src = without_origin(s.sources);
    const LeadField k = average_reference(leadfield_sphere_in_air(montage_fibonacci_cap(19), src));
    SourceSpace flipped = src;
    for (Index j = 0; j < flipped.size(); j += 2) (*flipped.normals)[j] *= -1.0;
    ELoretaConfig cfg;
    cfg.orientation = Orientation::fixed;
    const ELoretaSolution a = eloreta_weights_fixed(k, src, cfg);
    const ELoretaSolution b = eloreta_weights_fixed(k, flipped, cfg);
    CHECK(oracle::rel_frob(a.weights.blocks, b.weights.blocks) < 1e-12);
  }

  TEST_CASE("orientation mismatch and bad normals") {
    const Setup& s = eeg();
    CHECK_THROWS_AS(eloreta_weights_fixed(s.k, s.sources, ELoretaConfig{}), Error);
    ELoretaConfig fixed;
    fixed.orientation = Orientation::fixed;
    CHECK_THROWS_AS(eloreta_weights_free(s.k, fixed), Error);
    SourceSpace bad = s.sources;
    (*bad.normals)[0] *= 2.0;
    CHECK_THROWS_AS(eloreta_weights_fixed(s.k, bad, fixed), Error);
  }
}

TEST_SUITE("eloreta degenerate gains") {
  TEST_CASE("rank-2 MEG blocks") {
    const SourceSpace src = without_origin(sources_regular_grid(kDefaultHeadRadius, 0.025, 0.8));
    const LeadField k = leadfield_tangential_surrogate(montage_fibonacci_cap(19, 0.11, 3.14159), src);
    ELoretaConfig cfg;
    cfg.modality = Modality::meg;
    const ELoretaSolution sol = eloreta_weights_free(k, cfg);
    CHECK(sol.report.converged);
    CHECK(sol.report.residual < 1e-6);
    for (Index r : sol.report.block_ranks) CHECK(r == 2);
    for (Index j = 0; j < k.voxels(); ++j) {
      CHECK((MatrixXd(sol.weights.block(j)) * src.positions[j].normalized()).norm() <
            1e-6 * sol.weights.block(j).norm());
    }
    const InverseOperator t = eloreta_operator(k, sol.weights, cfg);
    CHECK(oracle::rel_frob(t.matrix, family_operator(k, eloreta_family_c(k, sol.weights, cfg)).matrix) < 1e-8);
    // Only tangential moments are visible; each one localizes exactly.
    for (Index j = 0; j < k.voxels(); ++j) {
      const Vector3d r = src.positions[j].normalized();
      const Vector3d tangent = r.cross(std::abs(r.z()) < 0.9 ? Vector3d::UnitZ() : Vector3d::UnitX()).normalized();
      Index hit = 0;
      power_map(t, k.block(j) * tangent).maxCoeff(&hit);
      CHECK(hit == j);
    }
  }

  TEST_CASE("silent voxels are named") {
    std::mt19937_64 rng(6);
    LeadField k;
    k.matrix = centering_matrix(8) * oracle::gaussian(8, 12, rng);
    k.matrix.middleCols(6, 3).setZero();
    k.average_referenced = true;
    try {
      eloreta_weights_free(k, ELoretaConfig{});
      FAIL("expected a singularity error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::singularity);
      CHECK(std::string(e.what()).find(": 2") != std::string::npos);
    }
  }

  TEST_CASE("rank-deficient EEG block is rejected") {
    std::mt19937_64 rng(7);
    LeadField k;
    k.matrix = centering_matrix(8) * oracle::gaussian(8, 9, rng);
    k.matrix.col(5) = 2.0 * k.matrix.col(4);
    k.average_referenced = true;
    try {
      eloreta_weights_free(k, ELoretaConfig{});
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::numeric);
      CHECK(std::string(e.what()).find("voxel 1") != std::string::npos);
    }
  }
}

TEST_SUITE("eloreta configuration and covariance") {
  TEST_CASE("configuration validation") {
    ELoretaConfig cfg;
    cfg.alpha = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ELoretaConfig{};
    cfg.tol = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ELoretaConfig{};
    cfg.max_iters = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ELoretaConfig{};
    cfg.relaxation = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK_THROWS_AS(parse_orientation("diagonal"), Error);
  }

  TEST_CASE("modality and reference checks") {
    const Setup& s = eeg();
    ELoretaConfig meg;
    meg.modality = Modality::meg;
    CHECK_THROWS_AS(eloreta_weights_free(s.k, meg), Error);
    LeadField raw = s.k;
    raw.average_referenced = false;
    CHECK_THROWS_AS(eloreta_weights_free(raw, ELoretaConfig{}), Error);
  }

  TEST_CASE("full covariance guard and blocks-only agreement") {
    const Setup& s = eeg();
    const ELoretaConfig cfg;
    const BlockWeights w = BlockWeights::identity(s.k.voxels(), 3);
    try {
      source_covariance(s.k, w, cfg, CovarianceMode::full, s.k.voxels() - 1);
      FAIL("expected the ceiling to refuse");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::configuration);
    }
    const SourceCovariance full = source_covariance(s.k, w, cfg);
    const SourceCovariance blocks = source_covariance(s.k, w, cfg, CovarianceMode::blocks_only, 1);
    CHECK(blocks.matrix.rows() == 3 * s.k.voxels());
    CHECK(blocks.matrix.cols() == 3);
    for (Index j = 0; j < s.k.voxels(); ++j) {
      CHECK(oracle::rel_frob(full.diagonal_block(j), blocks.diagonal_block(j)) < 1e-12);
    }
    CHECK_THROWS_AS(standardization_objective(blocks), Error);
  }

  TEST_CASE("weight layout mismatch") {
    const Setup& s = eeg();
    const BlockWeights wrong = BlockWeights::identity(s.k.voxels(), 1);
    CHECK_THROWS_AS(eloreta_operator(s.k, wrong, ELoretaConfig{}), Error);
    CHECK_THROWS_AS(eloreta_weights_free(s.k, ELoretaConfig{}, &wrong), Error);
  }
}
