#include <doctest.h>

#include "exactloc/error.hpp"
#include "exactloc/forward_model.hpp"
#include "exactloc/imaging.hpp"
#include "oracles.hpp"

using namespace exactloc;

namespace {

struct Geometry {
  SourceSpace sources;
  LeadField k;
};

const Geometry& coarse() {
  static const Geometry g = [] {
    Geometry out;
    out.sources = with_radial_normals(sources_regular_grid(kDefaultHeadRadius, 0.02, 0.8));
    out.k = average_reference(leadfield_sphere_in_air(montage_fibonacci_cap(19), out.sources));
    return out;
  }();
  return g;
}

Index argmax(const VectorXd& v) {
  Index i = 0;
  v.maxCoeff(&i);
  return i;
}

Measurement referenced(const VectorXd& phi) {
  Measurement m;
  m.phi = phi;
  m.average_referenced = true;
  return m;
}

// Zero-mean Gaussian draws with covariance `cov` (PSD), via its eigendecomposition.
std::vector<Measurement> gaussian_samples(const MatrixXd& cov, Index n, std::mt19937_64& rng) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  const MatrixXd factor = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::vector<Measurement> out;
  for (Index s = 0; s < n; ++s) out.push_back(referenced(factor * oracle::gaussian(cov.rows(), 1, rng)));
  return out;
}

}  // namespace

TEST_SUITE("family estimator") {
  TEST_CASE("zero measurement gives zero power") {
    const Geometry& g = coarse();
    const VoxelEstimate e = family_estimate(g.k, c_sloreta(g.k, 0.0), referenced(VectorXd::Zero(19)));
    CHECK(e.power.isZero(0.0));
    CHECK(e.j_hat.isZero(0.0));
  }

  TEST_CASE("single voxel returns the true moment") {
    std::mt19937_64 rng(2);
    LeadField k;
    k.matrix = centering_matrix(4) * oracle::gaussian(4, 3, rng);
    k.average_referenced = true;
    const Eigen::Vector3d a(0.3, -1.2, 0.7);
    const VoxelEstimate e = family_estimate(k, c_sloreta(k, 0.0), referenced(k.matrix * a));
    CHECK((e.voxel(0) - a).norm() < 1e-9);
  }

  TEST_CASE("power agrees with the direct quadratic form") {
    const Geometry& g = coarse();
    const FamilyParamC c = c_sloreta(g.k, default_alpha(g.k));
    const Eigen::Vector3d a(0.2, 0.5, -1.0);
    for (Index j : {Index{0}, g.k.voxels() / 2, g.k.voxels() - 1}) {
      const VoxelEstimate e = family_estimate(g.k, c, referenced(g.k.block(j) * a));
      for (Index i = 0; i < g.k.voxels(); i += 7) {
        const double expected = oracle::point_source_power(g.k.matrix, 3, c.matrix, j, a, i);
        CHECK(e.power(i) == doctest::Approx(expected).epsilon(1e-8));
      }
    }
  }

  TEST_CASE("operator and voxel-wise evaluation coincide") {
    const Geometry& g = coarse();
    const FamilyParamC c = c_sloreta(g.k, 1.0);
    std::mt19937_64 rng(3);
    const VectorXd phi = centering_matrix(19) * oracle::gaussian(19, 1, rng);
    const VoxelEstimate direct = family_estimate(g.k, c, referenced(phi));
    const VoxelEstimate via = apply_operator(family_operator(g.k, c), phi);
    CHECK(oracle::rel_frob(direct.j_hat, via.j_hat) < 1e-12);
    CHECK(oracle::rel_frob(direct.power, power_map(family_operator(g.k, c), phi)) < 1e-12);
  }

  TEST_CASE("scaling C scales power, argmax unchanged") {
    const Geometry& g = coarse();
    FamilyParamC c = c_sloreta(g.k, 0.0);
    const VectorXd phi = g.k.block(5) * Eigen::Vector3d(1, 1, 0);
    const VoxelEstimate base = family_estimate(g.k, c, referenced(phi));
    c.matrix *= 4.0;
    const VoxelEstimate scaled = family_estimate(g.k, c, referenced(phi));
    CHECK(oracle::rel_frob(scaled.power, 4.0 * base.power) < 1e-10);
    CHECK(argmax(scaled.power) == argmax(base.power));
  }

  TEST_CASE("reference offset does not change the estimate") {
    const Geometry& g = coarse();
    const LeadField raw = leadfield_sphere_in_air(montage_fibonacci_cap(19), g.sources);
    const Eigen::Vector3d a(0.0, 0.4, 1.0);
    Measurement m;
    m.phi = raw.block(9) * a;
    Measurement shifted = m;
    shifted.phi.array() += 12.5;
    const FamilyParamC c = c_sloreta(g.k, 0.0);
    const VoxelEstimate e1 = family_estimate(g.k, c, average_reference(m));
    const VoxelEstimate e2 = family_estimate(g.k, c, average_reference(shifted));
    CHECK(oracle::rel_frob(e1.j_hat, e2.j_hat) < 1e-9);
    CHECK(argmax(e1.power) == 9);
  }

  TEST_CASE("known orientation reduces to scalar ratios") {
    const Geometry& g = coarse();
    std::vector<Index> origin;
    for (Index j = 0; j < g.sources.size(); ++j)
      if (g.sources.positions[j].norm() == 0.0) origin.push_back(j);
    const SourceSpace s = prune_voxels(g.sources, origin);
    const LeadField kn = orient(average_reference(leadfield_sphere_in_air(montage_fibonacci_cap(19), s)), s);
    const FamilyParamC c = c_sloreta(kn, 0.0);
    const Index j = 11;
    const VectorXd phi = kn.matrix.col(j) * 2.5;
    const VoxelEstimate e = family_estimate(kn, c, referenced(phi));
    CHECK(e.block_size == 1);
    for (Index i = 0; i < kn.voxels(); i += 5) {
      const VectorXd ki = kn.matrix.col(i);
      const double expected = ki.dot(c.matrix * phi) / std::sqrt(ki.dot(c.matrix * ki));
      CHECK(e.j_hat(i) == doctest::Approx(expected).epsilon(1e-9));
    }
    CHECK(argmax(e.power) == j);
    CHECK(e.j_hat(j) == doctest::Approx(2.5 * std::sqrt(kn.matrix.col(j).dot(c.matrix * kn.matrix.col(j)))));
  }

  TEST_CASE("input errors") {
    const Geometry& g = coarse();
    const FamilyParamC c = c_sloreta(g.k, 0.0);
    LeadField raw = g.k;
    raw.average_referenced = false;
    CHECK_THROWS_AS(family_estimate(raw, c, referenced(VectorXd::Zero(19))), Error);
    Measurement unref;
    unref.phi = VectorXd::Zero(19);
    CHECK_THROWS_AS(family_estimate(g.k, c, unref), Error);
    CHECK_THROWS_AS(family_estimate(g.k, c, referenced(VectorXd::Zero(18))), Error);

    FamilyParamC bad = c;
    bad.matrix = MatrixXd::Identity(19, 19);
    try {
      family_operator(g.k, bad);
      FAIL("expected the C*1 check to fire");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::numeric);
    }
    bad.matrix = c.matrix;
    bad.matrix(0, 1) += 1e-3 * c.matrix.norm();
    CHECK_THROWS_AS(family_operator(g.k, bad), Error);
    bad.matrix = MatrixXd::Zero(5, 5);
    CHECK_THROWS_AS(family_operator(g.k, bad), Error);
  }
}

TEST_SUITE("c_sloreta") {
  TEST_CASE("vector of ones is in the null space") {
    const Geometry& g = coarse();
    for (double alpha : {0.0, 1.0, default_alpha(g.k)}) {
      const FamilyParamC c = c_sloreta(g.k, alpha);
      CHECK((c.matrix * VectorXd::Ones(19)).norm() <= 1e-10 * c.matrix.norm());
      CHECK_NOTHROW(c.validate());
      CHECK(c.rank() == 18);
      CHECK(c.provenance == CProvenance::sloreta);
    }
  }

  TEST_CASE("C K K^T = H without regularization") {
    const Geometry& g = coarse();
    const FamilyParamC c = c_sloreta(g.k, 0.0);
    const MatrixXd kkt = g.k.matrix * g.k.matrix.transpose();
    CHECK(oracle::rel_frob(c.matrix * kkt, centering_matrix(19)) < 1e-8);
  }

  TEST_CASE("alpha C tends to H for large alpha") {
    const Geometry& g = coarse();
    const double scale = (g.k.matrix * g.k.matrix.transpose()).trace();
    const double alpha = 1e9 * scale;
    const FamilyParamC c = c_sloreta(g.k, alpha);
    CHECK(oracle::rel_frob(alpha * c.matrix, centering_matrix(19)) < 1e-6);
  }

  TEST_CASE("MEG uses the identity regularizer") {
    std::mt19937_64 rng(8);
    LeadField k;
    k.matrix = oracle::gaussian(6, 12, rng);
    k.modality = Modality::meg;
    const FamilyParamC c = c_sloreta(k, 0.5);
    const MatrixXd expected = (k.matrix * k.matrix.transpose() + 0.5 * MatrixXd::Identity(6, 6)).inverse();
    CHECK(oracle::rel_frob(c.matrix, expected) < 1e-10);
  }

  TEST_CASE("noise-matched alpha") {
    const Geometry& g = coarse();
    const FamilyParamC a = c_sloreta_noise_matched(g.k, 2.0, 4.0);
    const FamilyParamC b = c_sloreta(g.k, 0.5);
    CHECK(oracle::rel_frob(a.matrix, b.matrix) < 1e-14);
    CHECK(a.alpha == 0.5);
    CHECK(oracle::rel_frob(c_sloreta_noise_matched(g.k, 0.0, 1.0).matrix, c_sloreta(g.k, 0.0).matrix) < 1e-14);
    CHECK_THROWS_AS(c_sloreta_noise_matched(g.k, 1.0, 0.0), Error);
  }

  TEST_CASE("errors") {
    const Geometry& g = coarse();
    CHECK_THROWS_AS(c_sloreta(g.k, -1.0), Error);
    LeadField raw = g.k;
    raw.average_referenced = false;
    CHECK_THROWS_AS(c_sloreta(raw, 0.0), Error);
  }

  TEST_CASE("default alpha") {
    const Geometry& g = coarse();
    const double trace = (g.k.matrix * g.k.matrix.transpose()).trace();
    CHECK(default_alpha(g.k) == doctest::Approx(1e-3 * trace / 19.0).epsilon(1e-12));
  }
}

TEST_SUITE("c_adaptive") {
  TEST_CASE("identical samples give C = 0") {
    std::vector<Measurement> samples(10, referenced(VectorXd::LinSpaced(5, -2, 2)));
    const FamilyParamC c = c_adaptive(samples, AdaptiveVariant::inverse_covariance);
    CHECK(c.matrix.isZero(0.0));
    CHECK(c.warning.has_value());
  }

  TEST_CASE("converges to the inverse covariance") {
    const SensorMontage m = montage_fibonacci_cap(5);
    const LeadField k = average_reference(leadfield_sphere_in_air(m, sources_regular_grid(kDefaultHeadRadius, 0.03, 0.8)));
    const MatrixXd kkt = k.matrix * k.matrix.transpose();
    const MatrixXd sigma = centering_matrix(5) + kkt / kkt.trace();
    std::mt19937_64 rng(12);
    const auto samples = gaussian_samples(sigma, 10000, rng);
    const FamilyParamC c = c_adaptive(samples, AdaptiveVariant::inverse_covariance);
    const MatrixXd target = oracle::cod_pinv(sigma, 1e-10);
    CHECK(oracle::rel_frob(c.matrix, target) < 0.1);
    CHECK((c.matrix - c.matrix.transpose()).norm() == 0.0);
    CHECK_FALSE(c.warning.has_value());
    CHECK_NOTHROW(c.validate());
    CHECK(c.provenance == CProvenance::adaptive_inverse_covariance);

    const FamilyParamC c2 = c_adaptive(samples, AdaptiveVariant::squared_inverse_covariance);
    CHECK(oracle::rel_frob(c2.matrix, target * target) < 0.2);
    CHECK(oracle::rel_frob(c2.matrix, c.matrix * c.matrix) < 1e-12);
  }

  TEST_CASE("too few samples carry a warning") {
    std::mt19937_64 rng(13);
    const auto samples = gaussian_samples(centering_matrix(6), 4, rng);
    const FamilyParamC c = c_adaptive(samples, AdaptiveVariant::inverse_covariance);
    REQUIRE(c.warning.has_value());
    CHECK(c.warning->find("4 samples") != std::string::npos);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(c_adaptive({}, AdaptiveVariant::inverse_covariance), Error);
    std::vector<Measurement> uneven{referenced(VectorXd::Zero(3)), referenced(VectorXd::Zero(4))};
    CHECK_THROWS_AS(c_adaptive(uneven, AdaptiveVariant::inverse_covariance), Error);
    CHECK_THROWS_AS(parse_adaptive_variant("cubed"), Error);
    CHECK(parse_adaptive_variant("squared-inverse-covariance") == AdaptiveVariant::squared_inverse_covariance);
  }
}

TEST_SUITE("weighted minimum norm") {
  TEST_CASE("identity weights: K T = H at alpha = 0") {
    const Geometry& g = coarse();
    const InverseOperator t = wmn_operator(g.k, BlockWeights::identity(g.k.voxels(), 3), 0.0);
    CHECK(oracle::rel_frob(g.k.matrix * t.matrix, centering_matrix(19)) < 1e-8);
  }

  TEST_CASE("matches the closed form with regularization") {
    const Geometry& g = coarse();
    const double alpha = default_alpha(g.k);
    const InverseOperator t = wmn_operator(g.k, BlockWeights::identity(g.k.voxels(), 3), alpha);
    const MatrixXd gram = g.k.matrix * g.k.matrix.transpose() + alpha * centering_matrix(19);
    const MatrixXd expected = g.k.matrix.transpose() * oracle::cod_pinv(gram, 1e-10 * gram.norm());
    CHECK(oracle::rel_frob(t.matrix, expected) < 1e-8);
  }

  TEST_CASE("depth weights") {
    const Geometry& g = coarse();
    const BlockWeights w = depth_weights(g.k, 1.0);
    for (Index j = 0; j < g.k.voxels(); j += 9) {
      CHECK(oracle::rel_frob(w.block(j), g.k.block(j).norm() * MatrixXd::Identity(3, 3)) < 1e-14);
    }
    const InverseOperator mn = wmn_operator(g.k, BlockWeights::identity(g.k.voxels(), 3), 1.0);
    const InverseOperator p0 = wmn_operator(g.k, depth_weights(g.k, 0.0), 1.0);
    CHECK(oracle::rel_frob(mn.matrix, p0.matrix) < 1e-12);

    // Explicit weighted form W^-1 K^T (K W^-1 K^T)^+ for p = 1.
    const MatrixXd winv = expand_blocks(inverse_blocks(w));
    const MatrixXd gram = g.k.matrix * winv * g.k.matrix.transpose();
    const MatrixXd expected = winv * g.k.matrix.transpose() * oracle::cod_pinv(gram, 1e-10 * gram.norm());
    CHECK(oracle::rel_frob(wmn_operator(g.k, w, 0.0).matrix, expected) < 1e-8);
  }

  TEST_CASE("minimum norm biases deep sources outward") {
    const Geometry& g = coarse();
    const InverseOperator mn = wmn_operator(g.k, BlockWeights::identity(g.k.voxels(), 3), 0.0);
    Index origin = 0;
    for (Index j = 0; j < g.sources.size(); ++j)
      if (g.sources.positions[j].norm() == 0.0) origin = j;
    const VectorXd p = power_map(mn, g.k.block(origin) * Eigen::Vector3d(0, 0, 1));
    const Index hit = argmax(p);
    CHECK(hit != origin);
    CHECK(g.sources.positions[hit].norm() > 0.03);
  }

  TEST_CASE("errors") {
    const Geometry& g = coarse();
    CHECK_THROWS_AS(wmn_operator(g.k, BlockWeights::identity(g.k.voxels() - 1, 3), 0.0), Error);
    CHECK_THROWS_AS(wmn_operator(g.k, BlockWeights::identity(g.k.voxels(), 1), 0.0), Error);
    CHECK_THROWS_AS(wmn_operator(g.k, BlockWeights::identity(g.k.voxels(), 3), -1.0), Error);
    CHECK_THROWS_AS(apply_operator(InverseOperator{MatrixXd::Zero(6, 4), 3}, VectorXd::Zero(5)), Error);
  }
}
