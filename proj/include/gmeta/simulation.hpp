#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gmeta/gmm.hpp"
#include "gmeta/moments.hpp"
#include "gmeta/rng.hpp"

namespace gmeta {

/// Pairwise correlations (rho12, rho13, rho23) of three unit-variance covariates.
struct Correlation {
  double r12 = 0.0;
  double r13 = 0.0;
  double r23 = 0.0;

  MatrixXd matrix() const;
  bool operator==(const Correlation&) const = default;
};

enum class InterceptMode { shared, study_specific };

/// Logistic simulation design with three correlated normal covariates.
struct SimScenario {
  std::string name = "custom";
  VectorXd beta_true;  // intercept followed by the three slopes
  std::vector<Correlation> study_correlations;
  Correlation reference_correlation;
  std::vector<int> study_sizes;
  int reference_size = 50;
  /// Covariates (1-based, from {1,2,3}) entering each study's model. Every
  /// study model also has an intercept.
  std::vector<std::vector<int>> study_covariates;
  /// When non-empty, every study also fits a model on these covariates and a
  /// fixed-effect meta-analysis of those fits is reported as variant "meta".
  std::vector<int> meta_covariates;
  bool report_study_fits = false;
  std::vector<Variant> variants{Variant::gmeta0, Variant::gmeta1, Variant::gmeta2};
  int replications = 500;
  std::uint64_t seed = 20170801;
  InterceptMode intercept_mode = InterceptMode::shared;
  GmetaConfig gmeta_config;

  /// Throws CorrelationError / DimensionError.
  void validate() const;
  std::size_t study_count() const noexcept { return study_sizes.size(); }
  std::vector<CovariateMap> covariate_maps() const;
  std::vector<std::string> reference_column_names() const;
  /// Names of the maximal coefficients: b0 (or b0_s1..b0_sK), b1, b2, b3.
  std::vector<std::string> coefficient_names() const;
  VectorXd coefficient_truth() const;
};

/// n_rows x 3 matrix of N(0, R) rows, R from `rho`, via the symmetric square
/// root of R. Throws CorrelationError if R is not positive definite.
MatrixXd gen_covariates(Index n_rows, const Correlation& rho, RandomStream& rng);

/// Bernoulli outcomes with logistic success probability g^{-1}(design * beta).
VectorXd gen_outcomes(const MatrixXd& design, const VectorXd& beta, RandomStream& rng);

/// Gaussian outcomes design * beta + N(0, sigma^2).
VectorXd gen_gaussian_outcomes(const MatrixXd& design, const VectorXd& beta, double sigma,
                               RandomStream& rng);

/// One variant's estimates in a replicate, aligned with
/// SimScenario::coefficient_names(); NaN marks coefficients the variant does
/// not estimate. se_study is NaN for non-GMeta variants.
struct VariantEstimate {
  std::string variant;
  VectorXd estimate;
  VectorXd se_reference;
  VectorXd se_study;
};

struct ReplicateResult {
  bool ok = false;
  std::string failure;  // "separation", "convergence", "identifiability", "other"
  std::string message;
  std::vector<VariantEstimate> variants;
};

/// Generates one replicate's data and fits every configured estimator.
ReplicateResult run_replicate(const SimScenario& scenario, int replicate);

struct CoefficientSummary {
  std::string variant;
  std::string coefficient;
  double truth = 0.0;
  int count = 0;
  double mean = 0.0;
  double bias = 0.0;
  double se = 0.0;    // empirical standard deviation (divisor = count)
  double ese1 = 0.0;  // mean estimated SE, reference-based Lambda
  double ese2 = 0.0;  // mean estimated SE, study-based Lambda
  double rmse = 0.0;
  double coverage1 = 0.0;
  double coverage2 = 0.0;
  double length1 = 0.0;
  double length2 = 0.0;
};

struct MonteCarloReport {
  std::string scenario;
  int reference_size = 0;
  int replications = 0;
  int failures = 0;
  std::map<std::string, int> failure_reasons;
  std::vector<CoefficientSummary> rows;
  std::vector<ReplicateResult> replicates;

  const CoefficientSummary& at(std::string_view variant, std::string_view coefficient) const;
  bool has(std::string_view variant, std::string_view coefficient) const;
};

/// Runs all replicates (on `threads` workers) and aggregates in replicate
/// order, so the report is identical for any thread count. Failed replicates
/// are dropped and counted.
MonteCarloReport run_scenario(const SimScenario& scenario, int threads = 1);

/// run_scenario at each reference size, holding everything else fixed.
std::vector<MonteCarloReport> reference_size_sweep(const SimScenario& base, const std::vector<int>& sizes,
                                                   int threads = 1);

/// Named designs: "table1", "table2" (six covariate-covariance settings),
/// "table3", "figure1" (base design for the sweep) and "equivalence".
std::vector<SimScenario> preset_scenarios(std::string_view name);
std::vector<int> figure1_reference_sizes();
bool is_sweep_preset(std::string_view name);

/// Aligned text table, 6 significant digits.
void write_report_table(std::ostream& os, const MonteCarloReport& report);
/// Delimited output, one row per variant x coefficient, full precision.
void write_report_csv(std::ostream& os, const std::vector<MonteCarloReport>& reports);
/// Parses write_report_csv output (replicate details are not stored).
std::vector<MonteCarloReport> read_report_csv(std::istream& is);

}  // namespace gmeta
