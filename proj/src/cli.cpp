#include "gmeta/cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "gmeta/errors.hpp"
#include "gmeta/io.hpp"
#include "gmeta/meta.hpp"
#include "gmeta/simulation.hpp"

namespace gmeta {

namespace {

constexpr double kZ975 = 1.959963984540054;

struct Options {
  std::string reference;
  std::string summaries;
  std::string variant;
  std::string config;
  std::string out;
  std::string preset;
  std::string scenario;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  int replications = 0;
};

std::string full(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

struct CoefRow {
  std::string name;
  double estimate, se;
};

void write_coef_table(std::ostream& os, const std::vector<CoefRow>& rows) {
  os << std::left << std::setw(16) << "coefficient" << std::right;
  for (const char* h : {"estimate", "SE", "CI.lower", "CI.upper", "z"}) os << std::setw(13) << h;
  os << "\n" << std::setprecision(6);
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.name << std::right << std::setw(13) << r.estimate << std::setw(13) << r.se
       << std::setw(13) << r.estimate - kZ975 * r.se << std::setw(13) << r.estimate + kZ975 * r.se << std::setw(13)
       << r.estimate / r.se << "\n";
  }
}

void write_coef_csv(std::ostream& os, const std::vector<CoefRow>& rows, const std::string& label, bool converged,
                    int inner, int outer, double objective) {
  os << "coefficient,estimate,se,ci_lower,ci_upper,z,variant,converged,inner_iterations,outer_iterations,objective\n";
  for (const auto& r : rows) {
    os << r.name << ',' << full(r.estimate) << ',' << full(r.se) << ',' << full(r.estimate - kZ975 * r.se) << ','
       << full(r.estimate + kZ975 * r.se) << ',' << full(r.estimate / r.se) << ',' << label << ','
       << (converged ? "true" : "false") << ',' << inner << ',' << outer << ',' << full(objective) << "\n";
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << text;
}

int cmd_fit(const Options& opt, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  if (!opt.config.empty()) cfg = load_run_config(opt.config);
  if (!opt.variant.empty()) cfg.variant = variant_from_string(opt.variant);
  if (!opt.out.empty()) cfg.out_path = opt.out;

  const ReferenceSample ref = load_reference(opt.reference);
  std::vector<std::string> warnings;
  auto studies = load_summaries(opt.summaries, ref, &warnings);
  for (const auto& w : warnings) err << "notice: " << w << "\n";

  std::optional<double> phi = cfg.maximal_dispersion;
  const bool gaussian = studies.front().family.kind() == FamilyKind::gaussian_identity;
  if (gaussian && !phi) {
    // Estimate the maximal dispersion at the identity-weighted solution.
    const MomentSystem prelim(studies, ref);
    const MinimizeResult m =
        minimize_objective(prelim, WeightingMatrix::identity(prelim.total_dim()), VectorXd::Zero(prelim.maximal_dim()), cfg.gmeta);
    double phi0 = 0.0;
    for (const auto& s : studies) phi0 += s.dispersion_scale() / static_cast<double>(studies.size());
    phi = fit_dispersion(prelim, m.beta, phi0, MatrixXd(), cfg.gmeta).phi;
    err << "notice: estimated maximal dispersion " << std::setprecision(6) << *phi << "\n";
  }

  const MomentSystem system(std::move(studies), ref, phi);
  const IdentifiabilityReport ident = identifiability_check(system, VectorXd::Zero(system.maximal_dim()));
  if (!ident.full_rank) {
    std::string msg = "moment Jacobian has rank " + std::to_string(ident.rank) + " < " +
                      std::to_string(system.maximal_dim());
    for (Index c : ident.uncovered_columns) msg += "; column '" + ref.column_names[c] + "' is in no study";
    throw IdentifiabilityError(msg);
  }
  if (cfg.variant == Variant::gmeta2) {
    for (const auto& s : system.studies()) {
      if (!s.covariance) err << "notice: study '" << s.map.study_id << "' uses the reference-based Lambda block\n";
    }
  }

  const GmetaFit fit = fit_gmeta(system, cfg.variant, cfg.gmeta);
  std::vector<CoefRow> rows;
  for (Index j = 0; j < fit.beta_hat.size(); ++j) {
    rows.push_back({ref.column_names[j], fit.beta_hat(j), std::sqrt(std::max(0.0, fit.covariance(j, j)))});
  }
  const std::string label(to_string(fit.variant));
  out << "variant " << label << "  converged " << (fit.converged ? "yes" : "no") << "  inner iterations "
      << fit.inner_iterations << "  outer iterations " << fit.outer_iterations << "  objective "
      << std::setprecision(6) << fit.objective_value << "\n";
  if (phi) out << "maximal dispersion " << std::setprecision(6) << *phi << "\n";
  write_coef_table(out, rows);
  if (cfg.out_path) {
    std::ostringstream csv;
    write_coef_csv(csv, rows, label, fit.converged, fit.inner_iterations, fit.outer_iterations, fit.objective_value);
    write_file(*cfg.out_path, csv.str());
  }
  return kExitOk;
}

int cmd_meta(const Options& opt, std::ostream& out, std::ostream& err) {
  ReferenceSample ref;
  if (!opt.reference.empty()) {
    ref = load_reference(opt.reference);
  } else {
    // Only the names matter here; collect them from the summaries file.
    std::ifstream in(opt.summaries);
    if (!in) throw ParseError("cannot open " + opt.summaries);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      key.erase(0, key.find_first_not_of(" \t"));
      key.erase(key.find_last_not_of(" \t") + 1);
      if (key != "covariates" && key != "exclude") continue;
      std::stringstream ss(line.substr(eq + 1));
      std::string name;
      while (std::getline(ss, name, ',')) {
        name.erase(0, name.find_first_not_of(" \t\r"));
        name.erase(name.find_last_not_of(" \t\r") + 1);
        if (!name.empty() && !ref.find_column(name)) ref.column_names.push_back(name);
      }
    }
    ref.design = MatrixXd::Ones(1, static_cast<Index>(ref.column_names.size()));
  }
  std::vector<std::string> warnings;
  const auto studies = load_summaries(opt.summaries, ref, &warnings);
  std::vector<MetaInput> inputs;
  for (const auto& s : studies) {
    if (s.map.maximal_columns != studies.front().map.maximal_columns) {
      throw DimensionError("study '" + s.map.study_id + "' does not share the covariates of '" +
                           studies.front().map.study_id + "'");
    }
    if (!s.covariance) throw MissingCovarianceError("study '" + s.map.study_id + "' has no covariance");
    inputs.push_back({s.theta_hat, *s.covariance});
  }
  const MetaFit fit = fixed_effect_meta(inputs);
  std::vector<CoefRow> rows;
  for (Index j = 0; j < fit.estimate.size(); ++j) {
    rows.push_back({ref.column_names[studies.front().map.maximal_columns[j]], fit.estimate(j),
                    std::sqrt(std::max(0.0, fit.covariance(j, j)))});
  }
  out << "fixed-effect meta-analysis of " << fit.k_studies << " studies\n";
  write_coef_table(out, rows);
  if (!opt.out.empty()) {
    std::ostringstream csv;
    write_coef_csv(csv, rows, "meta", true, 0, 0, 0.0);
    write_file(opt.out, csv.str());
  }
  (void)err;
  return kExitOk;
}

int cmd_simulate(const Options& opt, std::ostream& out, std::ostream& err) {
  std::vector<SimScenario> scenarios;
  bool sweep = false;
  if (!opt.scenario.empty()) {
    scenarios.push_back(load_scenario(opt.scenario));
  } else {
    scenarios = preset_scenarios(opt.preset);
    sweep = is_sweep_preset(opt.preset);
  }
  std::vector<MonteCarloReport> reports;
  for (auto& s : scenarios) {
    if (opt.seed_set) s.seed = opt.seed;
    if (opt.replications > 0) s.replications = opt.replications;
    if (sweep) {
      for (auto& r : reference_size_sweep(s, figure1_reference_sizes(), opt.threads)) reports.push_back(std::move(r));
    } else {
      reports.push_back(run_scenario(s, opt.threads));
    }
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (i) out << "\n";
    write_report_table(out, reports[i]);
    if (reports[i].failures > 0) {
      err << "notice: " << reports[i].scenario << " (n = " << reports[i].reference_size << ") dropped "
          << reports[i].failures << " failed replicates\n";
    }
  }
  if (!opt.out.empty()) {
    std::ostringstream csv;
    write_report_csv(csv, reports);
    write_file(opt.out, csv.str());
  }
  return kExitOk;
}

int classify_error(const std::exception& e) {
  if (dynamic_cast<const IdentifiabilityError*>(&e)) return kExitIdentifiability;
  if (dynamic_cast<const ConvergenceError*>(&e)) return kExitConvergence;
  return kExitData;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generalized meta-analysis of heterogeneous regression summaries", "gmeta"};
  app.require_subcommand(1);
  Options opt;

  auto* fit = app.add_subcommand("fit", "Estimate the maximal model from study summaries and a reference sample");
  fit->add_option("--reference", opt.reference, "Reference covariates (CSV with header)")->required();
  fit->add_option("--summaries", opt.summaries, "Study summaries file")->required();
  fit->add_option("--variant", opt.variant, "gmeta0, gmeta1 or gmeta2")
      ->check(CLI::IsMember({"gmeta0", "gmeta1", "gmeta2"}));
  fit->add_option("--config", opt.config, "JSON run configuration");
  fit->add_option("--out", opt.out, "Write the coefficient table as CSV");
  fit->add_option("--seed", opt.seed, "Recorded seed (fits are deterministic)");

  auto* meta = app.add_subcommand("meta", "Fixed-effect meta-analysis of identically shaped summaries");
  meta->add_option("--summaries", opt.summaries, "Study summaries file")->required();
  meta->add_option("--reference", opt.reference, "Reference covariates, used only for column names")
      ;
  meta->add_option("--out", opt.out, "Write the coefficient table as CSV");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo study of the estimators");
  auto* preset = sim->add_option("--preset", opt.preset, "table1, table2, table3, figure1 or equivalence")
                     ->check(CLI::IsMember({"table1", "table2", "table3", "figure1", "equivalence"}));
  auto* scen = sim->add_option("--scenario", opt.scenario, "JSON scenario file");
  preset->excludes(scen);
  sim->add_option("--seed", opt.seed, "Base seed");
  sim->add_option("--replications", opt.replications, "Override the replication count")->check(CLI::PositiveNumber);
  sim->add_option("--threads", opt.threads, "Worker threads")->check(CLI::Range(1, 1024));
  sim->add_option("--out", opt.out, "Write the report as CSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    if (sim->parsed() && opt.preset.empty() && opt.scenario.empty()) {
      throw CLI::RequiredError("simulate needs --preset or --scenario");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  opt.seed_set = sim->count("--seed") > 0;

  try {
    if (fit->parsed()) return cmd_fit(opt, out, err);
    if (meta->parsed()) return cmd_meta(opt, out, err);
    return cmd_simulate(opt, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return classify_error(e);
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace gmeta
