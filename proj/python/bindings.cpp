#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gmeta/errors.hpp"
#include "gmeta/glm.hpp"
#include "gmeta/gmm.hpp"
#include "gmeta/io.hpp"
#include "gmeta/meta.hpp"
#include "gmeta/simulation.hpp"

namespace py = pybind11;
using namespace gmeta;

namespace {

StudySummary make_study(const VectorXd& theta, const std::vector<Index>& columns, double n,
                        std::optional<MatrixXd> covariance, const std::string& family,
                        std::optional<double> dispersion, const std::vector<Index>& exclude,
                        const std::string& id) {
  StudySummary s;
  s.theta_hat = theta;
  s.map.maximal_columns = columns;
  s.map.excluded_columns = exclude;
  s.map.study_id = id;
  s.n = n;
  s.covariance = std::move(covariance);
  s.family = FamilySpec::from_name(family);
  s.dispersion = dispersion;
  return s;
}

ReferenceSample make_reference(const MatrixXd& design, std::vector<std::string> names) {
  ReferenceSample r;
  r.design = design;
  if (names.empty()) {
    for (Index j = 0; j < design.cols(); ++j) names.push_back("x" + std::to_string(j));
  }
  r.column_names = std::move(names);
  r.validate();
  return r;
}

py::dict report_rows(const MonteCarloReport& rep) {
  py::list rows;
  for (const auto& r : rep.rows) {
    py::dict d;
    d["variant"] = r.variant;
    d["coefficient"] = r.coefficient;
    d["truth"] = r.truth;
    d["count"] = r.count;
    d["mean"] = r.mean;
    d["bias"] = r.bias;
    d["se"] = r.se;
    d["ese1"] = r.ese1;
    d["ese2"] = r.ese2;
    d["rmse"] = r.rmse;
    d["coverage1"] = r.coverage1;
    d["coverage2"] = r.coverage2;
    d["length1"] = r.length1;
    d["length2"] = r.length2;
    rows.append(d);
  }
  py::dict out;
  out["scenario"] = rep.scenario;
  out["reference_size"] = rep.reference_size;
  out["replications"] = rep.replications;
  out["failures"] = rep.failures;
  out["rows"] = rows;
  return out;
}

}  // namespace

PYBIND11_MODULE(_gmeta, m) {
  m.doc() = "Generalized meta-analysis (GMeta) core";

  auto base = py::register_exception<Error>(m, "GmetaError", PyExc_RuntimeError);
  py::register_exception<IdentifiabilityError>(m, "IdentifiabilityError", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
  py::register_exception<SeparationError>(m, "SeparationError", base.ptr());
  py::register_exception<DispersionError>(m, "DispersionError", base.ptr());
  py::register_exception<MissingCovarianceError>(m, "MissingCovarianceError", base.ptr());
  py::register_exception<SingularCovarianceError>(m, "SingularCovarianceError", base.ptr());
  py::register_exception<CorrelationError>(m, "CorrelationError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());

  py::class_<GlmFit>(m, "GlmFit")
      .def_readonly("coefficients", &GlmFit::coefficients)
      .def_readonly("model_covariance", &GlmFit::model_covariance)
      .def_readonly("sandwich_covariance", &GlmFit::sandwich_covariance)
      .def_readonly("dispersion_estimate", &GlmFit::dispersion_estimate)
      .def_readonly("converged", &GlmFit::converged)
      .def_readonly("iterations", &GlmFit::iterations);

  m.def(
      "fit_mle",
      [](const MatrixXd& design, const VectorXd& y, const std::string& family) {
        return fit_mle(design, y, FamilySpec::from_name(family));
      },
      py::arg("design"), py::arg("y"), py::arg("family") = "bernoulli_logit",
      "GLM maximum likelihood fit (canonical link).");

  py::class_<MetaFit>(m, "MetaFit")
      .def_readonly("estimate", &MetaFit::estimate)
      .def_readonly("covariance", &MetaFit::covariance)
      .def_readonly("k_studies", &MetaFit::k_studies);

  m.def(
      "fixed_effect_meta",
      [](const std::vector<VectorXd>& thetas, const std::vector<MatrixXd>& covs) {
        if (thetas.size() != covs.size()) throw DimensionError("thetas and covariances differ in length");
        std::vector<MetaInput> in;
        for (std::size_t k = 0; k < thetas.size(); ++k) in.push_back({thetas[k], covs[k]});
        return fixed_effect_meta(in);
      },
      py::arg("thetas"), py::arg("covariances"));

  py::class_<StudySummary>(m, "StudySummary")
      .def(py::init(&make_study), py::arg("theta"), py::arg("columns"), py::arg("n"),
           py::arg("covariance") = py::none(), py::arg("family") = "bernoulli_logit",
           py::arg("dispersion") = py::none(), py::arg("exclude") = std::vector<Index>{}, py::arg("id") = "")
      .def_readonly("theta_hat", &StudySummary::theta_hat)
      .def_readonly("covariance", &StudySummary::covariance)
      .def_readonly("n", &StudySummary::n)
      .def_property_readonly("columns", [](const StudySummary& s) { return s.map.maximal_columns; })
      .def_property_readonly("id", [](const StudySummary& s) { return s.map.study_id; });

  py::class_<ReferenceSample>(m, "ReferenceSample")
      .def(py::init(&make_reference), py::arg("design"), py::arg("column_names") = std::vector<std::string>{})
      .def_readonly("design", &ReferenceSample::design)
      .def_readonly("column_names", &ReferenceSample::column_names);

  py::class_<GmetaFit>(m, "GmetaFit")
      .def_readonly("beta_hat", &GmetaFit::beta_hat)
      .def_readonly("covariance", &GmetaFit::covariance)
      .def_readonly("objective_value", &GmetaFit::objective_value)
      .def_readonly("converged", &GmetaFit::converged)
      .def_readonly("inner_iterations", &GmetaFit::inner_iterations)
      .def_readonly("outer_iterations", &GmetaFit::outer_iterations)
      .def_property_readonly("variant", [](const GmetaFit& f) { return std::string(to_string(f.variant)); })
      .def_property_readonly("weighting", [](const GmetaFit& f) { return f.weighting.matrix; });

  m.def(
      "fit_gmeta",
      [](const std::vector<StudySummary>& studies, const ReferenceSample& reference, const std::string& variant,
         std::optional<double> maximal_dispersion) {
        const MomentSystem system(studies, reference, maximal_dispersion);
        return fit_gmeta(system, variant_from_string(variant));
      },
      py::arg("studies"), py::arg("reference"), py::arg("variant") = "gmeta2",
      py::arg("maximal_dispersion") = py::none());

  m.def(
      "stacked_moment",
      [](const VectorXd& beta, const std::vector<StudySummary>& studies, const ReferenceSample& reference) {
        return stacked_moment(beta, MomentSystem(studies, reference));
      },
      py::arg("beta"), py::arg("studies"), py::arg("reference"));

  m.def("load_reference", [](const std::filesystem::path& p) { return load_reference(p); }, py::arg("path"));
  m.def(
      "load_summaries",
      [](const std::filesystem::path& p, const ReferenceSample& ref) { return load_summaries(p, ref); },
      py::arg("path"), py::arg("reference"));

  m.def(
      "simulate",
      [](const std::string& preset, int replications, std::optional<std::uint64_t> seed, int threads) {
        py::list out;
        for (auto s : preset_scenarios(preset)) {
          if (replications > 0) s.replications = replications;
          if (seed) s.seed = *seed;
          MonteCarloReport rep;
          {
            py::gil_scoped_release release;
            rep = run_scenario(s, threads);
          }
          out.append(report_rows(rep));
        }
        return out;
      },
      py::arg("preset"), py::arg("replications") = 0, py::arg("seed") = py::none(), py::arg("threads") = 1,
      "Run a named simulation preset; returns one dict per scenario.");
}
