#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "exactloc/error.hpp"
#include "exactloc/harness.hpp"
#include "exactloc/matrix_kernels.hpp"

namespace py = pybind11;
using namespace exactloc;

namespace {

using Rows3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Rows3 to_rows(const std::vector<Vector3d>& points) {
  Rows3 out(static_cast<Index>(points.size()), 3);
  for (Index i = 0; i < out.rows(); ++i) out.row(i) = points[static_cast<std::size_t>(i)].transpose();
  return out;
}

std::vector<Vector3d> to_points(const Eigen::Ref<const MatrixXd>& rows, const char* what) {
  if (rows.cols() != 3) throw Error(ErrorKind::dimension, std::string(what) + " must have 3 columns");
  std::vector<Vector3d> out;
  out.reserve(static_cast<std::size_t>(rows.rows()));
  for (Index i = 0; i < rows.rows(); ++i) out.emplace_back(rows.row(i).transpose());
  return out;
}

SourceSpace to_sources(const Eigen::Ref<const MatrixXd>& positions, const std::optional<MatrixXd>& normals) {
  SourceSpace s;
  s.positions = to_points(positions, "sources");
  if (normals) s.normals = to_points(*normals, "normals");
  return s;
}

LeadField to_leadfield(const MatrixXd& k, const std::string& modality) {
  LeadField out;
  out.matrix = k;
  out.modality = parse_modality(modality);
  out.validate();
  return out.modality == Modality::eeg ? average_reference(out) : out;
}

MethodSpec to_spec(const std::string& kind, const py::object& alpha, double depth_exponent, double sigma_phi,
                   double sigma_j, const std::string& orientation, double tol, int max_iters) {
  MethodSpec spec;
  spec.kind = parse_method_kind(kind);
  if (py::isinstance<py::str>(alpha)) {
    if (alpha.cast<std::string>() != "default") {
      throw Error(ErrorKind::configuration, "alpha must be a number or \"default\"");
    }
    spec.use_default_alpha = true;
  } else {
    spec.alpha = alpha.cast<double>();
  }
  spec.depth_exponent = depth_exponent;
  spec.sigma_phi = sigma_phi;
  spec.sigma_j = sigma_j;
  spec.orientation = parse_orientation(orientation);
  spec.eloreta.tol = tol;
  spec.eloreta.max_iters = max_iters;
  return spec;
}

py::dict report_dict(const FixedPointReport& r) {
  py::dict d;
  d["iterations"] = r.iterations;
  d["final_delta"] = r.final_delta;
  d["residual"] = r.residual;
  d["converged"] = r.converged;
  d["delta_history"] = r.delta_history;
  d["block_ranks"] = r.block_ranks;
  return d;
}

struct Method {
  PreparedMethod prepared;
  SourceSpace sources;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Distributed EEG/MEG inverse solutions with exact point-source localization";

  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  m.attr("DEFAULT_HEAD_RADIUS") = kDefaultHeadRadius;
  m.attr("DEFAULT_CONDUCTIVITY") = kDefaultConductivity;

  m.def("pseudo_inverse", [](const MatrixXd& a, double eps) { return pseudo_inverse(a, RankPolicy{eps}); },
        py::arg("a"), py::arg("eps") = 1e-5);
  m.def("sym_sqrt", [](const MatrixXd& a, double eps) { return sym_sqrt(a, RankPolicy{eps}); }, py::arg("a"),
        py::arg("eps") = 1e-5);
  m.def("sym_sqrt_pinv", [](const MatrixXd& a, double eps) { return sym_sqrt_pinv(a, RankPolicy{eps}); },
        py::arg("a"), py::arg("eps") = 1e-5);
  m.def("centering_matrix", &centering_matrix, py::arg("n"));

  m.def(
      "fibonacci_montage",
      [](Index n, double radius, double cap_angle) { return to_rows(montage_fibonacci_cap(n, radius, cap_angle).positions); },
      py::arg("n") = 19, py::arg("radius") = kDefaultHeadRadius, py::arg("cap_angle") = kDefaultCapAngle,
      "Electrode positions (n x 3) on a spherical cap.");
  m.def(
      "regular_grid",
      [](double radius, double spacing, double max_norm_fraction) {
        return to_rows(sources_regular_grid(radius, spacing, max_norm_fraction).positions);
      },
      py::arg("radius") = kDefaultHeadRadius, py::arg("spacing") = kDefaultGridSpacing,
      py::arg("max_norm_fraction") = kDefaultMaxNormFraction, "Voxel positions (N_V x 3) of a cubic grid.");
  m.def(
      "sphere_leadfield",
      [](const MatrixXd& montage, const MatrixXd& sources, double sigma) {
        SensorMontage mont;
        mont.positions = to_points(montage, "montage");
        return average_reference(leadfield_sphere_in_air(mont, to_sources(sources, std::nullopt), sigma)).matrix;
      },
      py::arg("montage"), py::arg("sources"), py::arg("sigma") = kDefaultConductivity,
      "Average-referenced homogeneous-sphere lead field (N_E x 3 N_V).");

  py::class_<Method>(m, "Method")
      .def_property_readonly("name", [](const Method& self) { return self.prepared.name; })
      .def_property_readonly("operator", [](const Method& self) { return self.prepared.op.matrix; })
      .def_property_readonly("c", [](const Method& self) -> std::optional<MatrixXd> {
        if (!self.prepared.c) return std::nullopt;
        return self.prepared.c->matrix;
      })
      .def_property_readonly("weights", [](const Method& self) -> std::optional<MatrixXd> {
        if (!self.prepared.weights) return std::nullopt;
        return self.prepared.weights->blocks;
      })
      .def_property_readonly("solver_report", [](const Method& self) -> py::object {
        if (!self.prepared.solver) return py::none();
        return report_dict(*self.prepared.solver);
      })
      .def_property_readonly("warnings", [](const Method& self) { return self.prepared.warnings; })
      .def("power", [](const Method& self, const VectorXd& phi) { return power_map(self.prepared.op, phi); },
           py::arg("phi"), "Per-voxel power for one measurement vector.")
      .def(
          "sweep",
          [](const Method& self, const std::string& moments, Index count, std::uint64_t seed) {
            SweepConfig cfg;
            if (moments == "canonical-axes") cfg.moments.kind = MomentPolicyKind::canonical_axes;
            else if (moments == "random") cfg.moments.kind = MomentPolicyKind::random;
            else if (moments == "canonical-plus-random") cfg.moments.kind = MomentPolicyKind::canonical_plus_random;
            else throw Error(ErrorKind::configuration, "unknown moment policy '" + moments + "'");
            cfg.moments.count = count;
            cfg.moments.seed = seed;
            cfg.validate();
            const LocalizationReport r = sweep_noiseless(self.prepared, self.sources, cfg);
            return py::module_::import("json").attr("loads")(r.summary_json());
          },
          py::arg("moments") = "canonical-plus-random", py::arg("count") = 5, py::arg("seed") = 1,
          "Noiseless point-source sweep over every voxel; returns the summary as a dict.");

  m.def(
      "prepare",
      [](const MatrixXd& k, const MatrixXd& sources, const std::string& kind, const py::object& alpha,
         double depth_exponent, double sigma_phi, double sigma_j, const std::string& orientation,
         const std::optional<MatrixXd>& normals, const std::string& modality, double tol, int max_iters) {
        Method out;
        out.sources = to_sources(sources, normals);
        const MethodSpec spec = to_spec(kind, alpha, depth_exponent, sigma_phi, sigma_j, orientation, tol, max_iters);
        out.prepared = prepare_method(to_leadfield(k, modality), out.sources, spec);
        return out;
      },
      py::arg("leadfield"), py::arg("sources"), py::arg("kind") = "sloreta", py::arg("alpha") = 0.0,
      py::arg("depth_exponent") = 1.0, py::arg("sigma_phi") = 0.0, py::arg("sigma_j") = 1.0,
      py::arg("orientation") = "free", py::arg("normals") = std::nullopt, py::arg("modality") = "eeg",
      py::arg("tol") = 1e-8, py::arg("max_iters") = 500,
      "Build an inverse method (min-norm, depth-weighted-mn, sloreta, sloreta-noise-matched, eloreta).");
}
