#include "gmeta/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include "gmeta/errors.hpp"
#include "gmeta/glm.hpp"
#include "gmeta/linalg.hpp"
#include "gmeta/meta.hpp"

namespace gmeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ975 = 1.959963984540054;

const Correlation kRhoA{0.2, 0.4, 0.0};  // low
const Correlation kRhoB{0.3, 0.6, 0.1};  // baseline
const Correlation kRhoC{0.4, 0.8, 0.2};  // high

std::string join_covariates(const std::vector<int>& covs) {
  std::string s;
  for (std::size_t i = 0; i < covs.size(); ++i) {
    if (i) s += "+";
    s += "x" + std::to_string(covs[i]);
  }
  return s;
}

std::string study_fit_label(std::size_t k, const std::vector<int>& covs) {
  return "study" + std::to_string(k + 1) + "[" + join_covariates(covs) + "]";
}

// Study design [1, X[:, covs]].
MatrixXd study_design(const MatrixXd& x, const std::vector<int>& covs) {
  MatrixXd d(x.rows(), static_cast<Index>(covs.size()) + 1);
  d.col(0).setOnes();
  for (std::size_t j = 0; j < covs.size(); ++j) d.col(static_cast<Index>(j) + 1) = x.col(covs[j] - 1);
  return d;
}

std::string classify(const std::exception& e) {
  if (dynamic_cast<const SeparationError*>(&e)) return "separation";
  if (dynamic_cast<const ConvergenceError*>(&e)) return "convergence";
  if (dynamic_cast<const IdentifiabilityError*>(&e)) return "identifiability";
  return "other";
}

VectorXd sqrt_diag(const MatrixXd& m) { return m.diagonal().cwiseMax(0.0).cwiseSqrt(); }

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  if (s == "NA") return kNaN;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw ParseError("bad number '" + s + "'");
  return v;
}

}  // namespace

MatrixXd Correlation::matrix() const {
  MatrixXd r(3, 3);
  r << 1.0, r12, r13, r12, 1.0, r23, r13, r23, 1.0;
  return r;
}

void SimScenario::validate() const {
  const std::size_t k = study_sizes.size();
  if (k == 0) throw DimensionError("scenario '" + name + "' has no studies");
  if (beta_true.size() != 4) throw DimensionError("beta_true must hold an intercept and three slopes");
  if (study_correlations.size() != k || study_covariates.size() != k) {
    throw DimensionError("scenario '" + name + "': per-study lists differ in length");
  }
  if (replications < 1) throw DimensionError("replications must be at least 1");
  if (reference_size < 1) throw DimensionError("reference_size must be at least 1");
  for (int n : study_sizes) {
    if (n < 1) throw DimensionError("study sizes must be positive");
  }
  const auto check_covs = [&](const std::vector<int>& covs) {
    for (int c : covs) {
      if (c < 1 || c > 3) throw DimensionError("covariate indices must be in {1,2,3}");
    }
  };
  for (const auto& c : study_covariates) check_covs(c);
  check_covs(meta_covariates);
  for (const auto& rho : study_correlations) {
    if (min_eigenvalue(rho.matrix()) <= 0.0) throw CorrelationError("study correlation matrix is not positive definite");
  }
  if (min_eigenvalue(reference_correlation.matrix()) <= 0.0) {
    throw CorrelationError("reference correlation matrix is not positive definite");
  }
}

std::vector<std::string> SimScenario::reference_column_names() const {
  std::vector<std::string> names;
  if (intercept_mode == InterceptMode::shared) {
    names.push_back("_intercept");
  } else {
    for (std::size_t k = 0; k < study_count(); ++k) names.push_back("_intercept_s" + std::to_string(k + 1));
  }
  for (int j = 1; j <= 3; ++j) names.push_back("x" + std::to_string(j));
  return names;
}

std::vector<std::string> SimScenario::coefficient_names() const {
  std::vector<std::string> names;
  if (intercept_mode == InterceptMode::shared) {
    names.push_back("b0");
  } else {
    for (std::size_t k = 0; k < study_count(); ++k) names.push_back("b0_s" + std::to_string(k + 1));
  }
  for (int j = 1; j <= 3; ++j) names.push_back("b" + std::to_string(j));
  return names;
}

VectorXd SimScenario::coefficient_truth() const {
  const Index intercepts = intercept_mode == InterceptMode::shared ? 1 : static_cast<Index>(study_count());
  VectorXd t(intercepts + 3);
  t.head(intercepts).setConstant(beta_true(0));
  t.tail(3) = beta_true.tail(3);
  return t;
}

std::vector<CovariateMap> SimScenario::covariate_maps() const {
  const Index intercepts = intercept_mode == InterceptMode::shared ? 1 : static_cast<Index>(study_count());
  std::vector<CovariateMap> maps;
  for (std::size_t k = 0; k < study_count(); ++k) {
    CovariateMap m;
    m.study_id = "study" + std::to_string(k + 1);
    const Index own = intercept_mode == InterceptMode::shared ? 0 : static_cast<Index>(k);
    m.maximal_columns.push_back(own);
    for (int c : study_covariates[k]) m.maximal_columns.push_back(intercepts - 1 + c);
    for (Index j = 0; j < intercepts; ++j) {
      if (j != own) m.excluded_columns.push_back(j);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

MatrixXd gen_covariates(Index n_rows, const Correlation& rho, RandomStream& rng) {
  const MatrixXd r = rho.matrix();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(r);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
    throw CorrelationError("correlation matrix is not positive definite");
  }
  const MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  MatrixXd z(n_rows, 3);
  for (Index i = 0; i < n_rows; ++i) {
    for (Index j = 0; j < 3; ++j) z(i, j) = rng.normal();
  }
  return z * root;
}

VectorXd gen_outcomes(const MatrixXd& design, const VectorXd& beta, RandomStream& rng) {
  if (design.cols() != beta.size()) throw DimensionError("gen_outcomes: design and beta disagree");
  const VectorXd eta = design * beta;
  VectorXd y(eta.size());
  for (Index i = 0; i < eta.size(); ++i) y(i) = rng.bernoulli(logistic(eta(i))) ? 1.0 : 0.0;
  return y;
}

VectorXd gen_gaussian_outcomes(const MatrixXd& design, const VectorXd& beta, double sigma,
                               RandomStream& rng) {
  if (design.cols() != beta.size()) throw DimensionError("gen_gaussian_outcomes: design and beta disagree");
  VectorXd y = design * beta;
  for (Index i = 0; i < y.size(); ++i) y(i) += sigma * rng.normal();
  return y;
}

ReplicateResult run_replicate(const SimScenario& scenario, int replicate) {
  ReplicateResult result;
  const std::size_t kk = scenario.study_count();
  const auto names = scenario.coefficient_names();
  const Index p = static_cast<Index>(names.size());
  const Index intercepts = p - 3;
  const bool shared = scenario.intercept_mode == InterceptMode::shared;

  RandomStream rng(scenario.seed, static_cast<std::uint64_t>(replicate));
  std::vector<MatrixXd> xs;
  std::vector<VectorXd> ys;
  for (std::size_t k = 0; k < kk; ++k) {
    MatrixXd x = gen_covariates(scenario.study_sizes[k], scenario.study_correlations[k], rng);
    MatrixXd full(x.rows(), 4);
    full << VectorXd::Ones(x.rows()), x;
    ys.push_back(gen_outcomes(full, scenario.beta_true, rng));
    xs.push_back(std::move(x));
  }
  const MatrixXd x_ref = gen_covariates(scenario.reference_size, scenario.reference_correlation, rng);

  // Places a study-level vector (intercept, covariates...) into maximal coefficient positions.
  const auto place = [&](std::size_t k, const std::vector<int>& covs, const VectorXd& v) {
    VectorXd out = VectorXd::Constant(p, kNaN);
    out(shared ? 0 : static_cast<Index>(k)) = v(0);
    for (std::size_t j = 0; j < covs.size(); ++j) out(intercepts - 1 + covs[j]) = v(static_cast<Index>(j) + 1);
    return out;
  };

  try {
    std::vector<StudySummary> studies;
    std::vector<GlmFit> fits;
    const auto maps = scenario.covariate_maps();
    for (std::size_t k = 0; k < kk; ++k) {
      GlmFit fit = fit_mle(study_design(xs[k], scenario.study_covariates[k]), ys[k], FamilySpec::bernoulli_logit());
      StudySummary s;
      s.theta_hat = fit.coefficients;
      s.covariance = fit.sandwich_covariance;
      s.n = scenario.study_sizes[k];
      s.family = FamilySpec::bernoulli_logit();
      s.map = maps[k];
      studies.push_back(std::move(s));
      fits.push_back(std::move(fit));
    }

    ReferenceSample ref;
    ref.design.resize(x_ref.rows(), p);
    ref.design.leftCols(intercepts).setOnes();
    ref.design.rightCols(3) = x_ref;
    ref.column_names = scenario.reference_column_names();
    const MomentSystem system(studies, ref);

    for (Variant v : scenario.variants) {
      const GmetaFit fit = fit_gmeta(system, v, scenario.gmeta_config);
      VariantEstimate est;
      est.variant = std::string(to_string(v));
      est.estimate = fit.beta_hat;
      est.se_reference = sqrt_diag(asymptotic_covariance(fit, system, LambdaSource::reference));
      est.se_study = sqrt_diag(asymptotic_covariance(fit, system, LambdaSource::study));
      result.variants.push_back(std::move(est));
    }

    if (!scenario.meta_covariates.empty()) {
      std::vector<GlmFit> meta_fits;
      for (std::size_t k = 0; k < kk; ++k) {
        if (scenario.study_covariates[k] == scenario.meta_covariates) {
          meta_fits.push_back(fits[k]);
        } else {
          meta_fits.push_back(fit_mle(study_design(xs[k], scenario.meta_covariates), ys[k],
                                      FamilySpec::bernoulli_logit()));
        }
      }
      // Intercepts are pooled only when they are shared.
      const Index skip = shared ? 0 : 1;
      std::vector<MetaInput> inputs;
      for (const auto& f : meta_fits) {
        const Index m = f.coefficients.size() - skip;
        inputs.push_back({f.coefficients.tail(m), f.sandwich_covariance.bottomRightCorner(m, m)});
      }
      const MetaFit meta = fixed_effect_meta(inputs);
      VectorXd padded(meta.estimate.size() + skip);
      VectorXd padded_se(padded.size());
      if (skip) {
        padded(0) = kNaN;
        padded_se(0) = kNaN;
      }
      padded.tail(meta.estimate.size()) = meta.estimate;
      padded_se.tail(meta.estimate.size()) = sqrt_diag(meta.covariance);
      VariantEstimate est;
      est.variant = "meta";
      est.estimate = place(0, scenario.meta_covariates, padded);
      est.se_reference = place(0, scenario.meta_covariates, padded_se);
      est.se_study = VectorXd::Constant(p, kNaN);
      result.variants.push_back(std::move(est));

      if (scenario.report_study_fits) {
        for (std::size_t k = 0; k < kk; ++k) {
          if (scenario.study_covariates[k] == scenario.meta_covariates) continue;
          VariantEstimate e;
          e.variant = study_fit_label(k, scenario.meta_covariates);
          e.estimate = place(k, scenario.meta_covariates, meta_fits[k].coefficients);
          e.se_reference = place(k, scenario.meta_covariates, sqrt_diag(meta_fits[k].sandwich_covariance));
          e.se_study = VectorXd::Constant(p, kNaN);
          result.variants.push_back(std::move(e));
        }
      }
    }
    if (scenario.report_study_fits) {
      for (std::size_t k = 0; k < kk; ++k) {
        VariantEstimate e;
        e.variant = study_fit_label(k, scenario.study_covariates[k]);
        e.estimate = place(k, scenario.study_covariates[k], fits[k].coefficients);
        e.se_reference = place(k, scenario.study_covariates[k], sqrt_diag(fits[k].sandwich_covariance));
        e.se_study = VectorXd::Constant(p, kNaN);
        result.variants.push_back(std::move(e));
      }
    }
    result.ok = true;
  } catch (const Error& e) {
    result.ok = false;
    result.failure = classify(e);
    result.message = e.what();
    result.variants.clear();
  }
  return result;
}

const CoefficientSummary& MonteCarloReport::at(std::string_view variant, std::string_view coefficient) const {
  for (const auto& r : rows) {
    if (r.variant == variant && r.coefficient == coefficient) return r;
  }
  throw DimensionError("report has no row for " + std::string(variant) + "/" + std::string(coefficient));
}

bool MonteCarloReport::has(std::string_view variant, std::string_view coefficient) const {
  for (const auto& r : rows) {
    if (r.variant == variant && r.coefficient == coefficient) return true;
  }
  return false;
}

MonteCarloReport run_scenario(const SimScenario& scenario, int threads) {
  scenario.validate();
  const int reps = scenario.replications;
  std::vector<ReplicateResult> results(static_cast<std::size_t>(reps));

  const int workers = std::max(1, std::min(threads, reps));
  if (workers == 1) {
    for (int r = 0; r < reps; ++r) results[r] = run_replicate(scenario, r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int r = next++; r < reps; r = next++) results[r] = run_replicate(scenario, r);
      });
    }
    for (auto& t : pool) t.join();
  }

  MonteCarloReport report;
  report.scenario = scenario.name;
  report.reference_size = scenario.reference_size;
  report.replications = reps;
  for (const auto& r : results) {
    if (!r.ok) {
      ++report.failures;
      ++report.failure_reasons[r.failure];
    }
  }

  const auto names = scenario.coefficient_names();
  const VectorXd truth = scenario.coefficient_truth();
  // Variant labels in first-seen order.
  std::vector<std::string> labels;
  for (const auto& r : results) {
    for (const auto& v : r.variants) {
      if (std::find(labels.begin(), labels.end(), v.variant) == labels.end()) labels.push_back(v.variant);
    }
  }

  for (const auto& label : labels) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      const Index jj = static_cast<Index>(j);
      std::vector<const VariantEstimate*> hits;
      for (const auto& r : results) {
        for (const auto& v : r.variants) {
          if (v.variant == label && std::isfinite(v.estimate(jj))) hits.push_back(&v);
        }
      }
      if (hits.empty()) continue;
      CoefficientSummary s;
      s.variant = label;
      s.coefficient = names[j];
      s.truth = truth(jj);
      s.count = static_cast<int>(hits.size());
      const double cnt = static_cast<double>(hits.size());
      double sum = 0.0;
      for (const auto* v : hits) sum += v->estimate(jj);
      s.mean = sum / cnt;
      s.bias = s.mean - s.truth;
      double ss = 0.0, mse = 0.0, e1 = 0.0, e2 = 0.0, c1 = 0.0, c2 = 0.0;
      for (const auto* v : hits) {
        const double e = v->estimate(jj);
        ss += (e - s.mean) * (e - s.mean);
        mse += (e - s.truth) * (e - s.truth);
        const double se1 = v->se_reference(jj);
        const double se2 = v->se_study(jj);
        e1 += se1;
        e2 += se2;
        c1 += std::abs(e - s.truth) <= kZ975 * se1 ? 1.0 : 0.0;
        c2 += std::abs(e - s.truth) <= kZ975 * se2 ? 1.0 : 0.0;
      }
      s.se = std::sqrt(ss / cnt);
      s.rmse = std::sqrt(mse / cnt);
      s.ese1 = e1 / cnt;
      s.ese2 = e2 / cnt;
      s.coverage1 = std::isnan(s.ese1) ? kNaN : c1 / cnt;
      s.coverage2 = std::isnan(s.ese2) ? kNaN : c2 / cnt;
      s.length1 = 2.0 * kZ975 * s.ese1;
      s.length2 = 2.0 * kZ975 * s.ese2;
      report.rows.push_back(std::move(s));
    }
  }
  report.replicates = std::move(results);
  return report;
}

std::vector<MonteCarloReport> reference_size_sweep(const SimScenario& base, const std::vector<int>& sizes,
                                                   int threads) {
  std::vector<MonteCarloReport> out;
  for (int n : sizes) {
    SimScenario s = base;
    s.reference_size = n;
    out.push_back(run_scenario(s, threads));
  }
  return out;
}

namespace {

SimScenario table1_base() {
  SimScenario s;
  s.name = "table1";
  s.beta_true = VectorXd(4);
  s.beta_true << 0.0, std::log(1.3), std::log(1.3), std::log(1.3);
  s.study_correlations = {kRhoB, kRhoB, kRhoB};
  s.reference_correlation = kRhoB;
  s.study_sizes = {300, 500, 1000};
  s.reference_size = 50;
  s.study_covariates = {{1, 2}, {1, 3}, {2, 3}};
  // The weighting fixed point contracts slowly with small reference samples.
  s.gmeta_config.outer_max_iterations = 100;
  return s;
}

}  // namespace

std::vector<int> figure1_reference_sizes() { return {10, 30, 50, 70, 100, 200, 1000}; }

bool is_sweep_preset(std::string_view name) { return name == "figure1"; }

std::vector<SimScenario> preset_scenarios(std::string_view name) {
  if (name == "table1") return {table1_base()};
  if (name == "figure1") {
    SimScenario s = table1_base();
    s.name = "figure1";
    return {s};
  }
  if (name == "table2") {
    struct Setting {
      const char* tag;
      Correlation s1, s2, s3, ref;
    };
    const Setting settings[] = {
        {"ooo-o", kRhoB, kRhoB, kRhoB, kRhoB}, {"ooo-h", kRhoB, kRhoB, kRhoB, kRhoC},
        {"ooo-l", kRhoB, kRhoB, kRhoB, kRhoA}, {"hol-o", kRhoC, kRhoB, kRhoA, kRhoB},
        {"hol-h", kRhoC, kRhoB, kRhoA, kRhoC}, {"hol-l", kRhoC, kRhoB, kRhoA, kRhoA},
    };
    std::vector<SimScenario> out;
    for (const auto& st : settings) {
      SimScenario s = table1_base();
      s.name = std::string("table2-") + st.tag;
      s.study_correlations = {st.s1, st.s2, st.s3};
      s.reference_correlation = st.ref;
      s.variants = {Variant::gmeta2};
      out.push_back(s);
    }
    return out;
  }
  if (name == "table3") {
    SimScenario s = table1_base();
    s.name = "table3";
    s.study_correlations = {kRhoB, kRhoB};
    s.study_sizes = {500, 5000};
    s.reference_size = 300;
    s.study_covariates = {{1, 2, 3}, {1, 2}};
    s.meta_covariates = {1, 2};
    s.report_study_fits = true;
    s.intercept_mode = InterceptMode::study_specific;
    s.variants = {Variant::gmeta1, Variant::gmeta2};
    return {s};
  }
  if (name == "equivalence") {
    SimScenario s = table1_base();
    s.name = "equivalence";
    s.study_sizes = {5000, 5000, 5000};
    s.reference_size = 2000;
    s.study_covariates = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
    s.meta_covariates = {1, 2, 3};
    s.replications = 50;
    s.variants = {Variant::gmeta1, Variant::gmeta2};
    return {s};
  }
  throw ParseError("unknown preset '" + std::string(name) + "'");
}

void write_report_table(std::ostream& os, const MonteCarloReport& report) {
  os << "scenario " << report.scenario << "  reference n = " << report.reference_size
     << "  replications = " << report.replications << "  failures = " << report.failures;
  for (const auto& [reason, count] : report.failure_reasons) os << " (" << reason << ": " << count << ")";
  os << "\n";
  const int w = 11;
  os << std::left << std::setw(18) << "variant" << std::setw(8) << "coef" << std::right;
  for (const char* h : {"bias", "SE", "ESE1", "ESE2", "RMSE", "CR1", "CR2", "AL1", "AL2"}) os << std::setw(w) << h;
  os << "\n";
  const auto cell = [&](double v) {
    if (std::isnan(v)) {
      os << std::setw(w) << "NA";
    } else {
      os << std::setw(w) << std::setprecision(6) << v;
    }
  };
  for (const auto& r : report.rows) {
    os << std::left << std::setw(18) << r.variant << std::setw(8) << r.coefficient << std::right;
    for (double v : {r.bias, r.se, r.ese1, r.ese2, r.rmse, r.coverage1, r.coverage2, r.length1, r.length2}) cell(v);
    os << "\n";
  }
}

namespace {

const char* kCsvHeader =
    "scenario,reference_size,replications,failures,variant,coefficient,truth,count,mean,bias,se,ese1,ese2,"
    "rmse,coverage1,coverage2,length1,length2";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_report_csv(std::ostream& os, const std::vector<MonteCarloReport>& reports) {
  os << kCsvHeader << "\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      os << rep.scenario << ',' << rep.reference_size << ',' << rep.replications << ',' << rep.failures << ','
         << r.variant << ',' << r.coefficient << ',' << format_double(r.truth) << ',' << r.count;
      for (double v : {r.mean, r.bias, r.se, r.ese1, r.ese2, r.rmse, r.coverage1, r.coverage2, r.length1,
                       r.length2}) {
        os << ',' << format_double(v);
      }
      os << "\n";
    }
  }
}

std::vector<MonteCarloReport> read_report_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader) throw ParseError("report file has an unexpected header");
  std::vector<MonteCarloReport> reports;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 18) throw ParseError("report line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    const int ref = std::stoi(f[1]);
    if (reports.empty() || reports.back().scenario != f[0] || reports.back().reference_size != ref) {
      MonteCarloReport rep;
      rep.scenario = f[0];
      rep.reference_size = ref;
      rep.replications = std::stoi(f[2]);
      rep.failures = std::stoi(f[3]);
      reports.push_back(std::move(rep));
    }
    CoefficientSummary s;
    s.variant = f[4];
    s.coefficient = f[5];
    s.truth = parse_double(f[6]);
    s.count = std::stoi(f[7]);
    double* fields[] = {&s.mean, &s.bias, &s.se, &s.ese1, &s.ese2, &s.rmse,
                        &s.coverage1, &s.coverage2, &s.length1, &s.length2};
    for (std::size_t i = 0; i < 10; ++i) *fields[i] = parse_double(f[8 + i]);
    reports.back().rows.push_back(std::move(s));
  }
  return reports;
}

}  // namespace gmeta
