#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gmeta/moments.hpp"

namespace gmeta {

enum class WeightingProvenance { identity, optimal_ref, optimal_study, user };

/// Symmetric PSD weighting matrix C of the quadratic form U' C U.
struct WeightingMatrix {
  MatrixXd matrix;
  WeightingProvenance provenance = WeightingProvenance::user;

  static WeightingMatrix identity(Index d) {
    return {MatrixXd::Identity(d, d), WeightingProvenance::identity};
  }
  /// Throws DimensionError unless symmetric, finite and PSD (min eigenvalue
  /// >= -1e-10 * trace).
  void validate() const;
};

enum class HessianMode { full_newton, gauss_newton };
enum class Variant { gmeta0, gmeta1, gmeta2 };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
std::string_view to_string(HessianMode m);
HessianMode hessian_mode_from_string(std::string_view name);
std::string_view to_string(WeightingProvenance p);

struct GmetaConfig {
  double inner_tolerance = 1e-10;
  int inner_max_iterations = 100;
  double outer_tolerance = 1e-8;
  int outer_max_iterations = 20;
  double ridge_epsilon = 1e-10;  // relative to the trace of the matrix being inverted
  HessianMode hessian_mode = HessianMode::gauss_newton;
  int max_halvings = 20;

  void validate() const;
  bool operator==(const GmetaConfig&) const = default;
};

struct GmetaFit {
  VectorXd beta_hat;
  MatrixXd covariance;  // finite-sample scale, p x p
  WeightingMatrix weighting;
  double objective_value = 0.0;
  bool converged = false;
  int inner_iterations = 0;  // summed over all inner minimizations
  int outer_iterations = 0;
  Variant variant = Variant::gmeta0;
  std::vector<double> objective_trace;  // objective after every accepted inner step
};

/// Q_C(beta) = U_n' C U_n.
double objective(const VectorXd& beta, const MomentSystem& system, const WeightingMatrix& weighting);

/// dQ/dbeta = 2 G' C U_n.
VectorXd objective_gradient(const VectorXd& beta, const MomentSystem& system,
                            const WeightingMatrix& weighting);

/// One damped Newton / IRWLS step for Q_C. The step is halved (up to
/// config.max_halvings times) until the objective does not increase; if no
/// such step exists beta_t is returned unchanged. Throws IdentifiabilityError
/// when the Hessian stays singular after ridge regularization.
VectorXd newton_step_beta(const VectorXd& beta_t, const MomentSystem& system,
                          const WeightingMatrix& weighting, const GmetaConfig& config);

struct MinimizeResult {
  VectorXd beta;
  double objective = 0.0;
  int iterations = 0;
  std::vector<double> trace;
};

/// Iterates newton_step_beta from `start` until the step's infinity norm
/// drops below inner_tolerance. Throws ConvergenceError otherwise.
MinimizeResult minimize_objective(const MomentSystem& system, const WeightingMatrix& weighting,
                                  const VectorXd& start, const GmetaConfig& config);

/// GMeta estimator. gmeta0 minimizes with C = I from beta = 0; gmeta1/gmeta2
/// start from the gmeta0 solution and iterate C = (Delta_hat + Lambda_hat)^{-1}
/// with reference-based / study-based Lambda until successive estimates differ
/// by less than outer_tolerance.
GmetaFit fit_gmeta(const MomentSystem& system, Variant variant, const GmetaConfig& config = {});

/// Lambda source used for a variant's reported covariance.
LambdaSource default_lambda_source(Variant variant, const MomentSystem& system);

/// Var(beta_hat) at finite-sample scale. Uses (Gamma' M^{-1} Gamma)^{-1} with
/// M = Delta/n + Lambda/n when the fit's weighting is optimal for `source`,
/// and the sandwich form with the fit's C otherwise.
MatrixXd asymptotic_covariance(const GmetaFit& fit, const MomentSystem& system, LambdaSource source);

struct IdentifiabilityReport {
  Index rank = 0;
  bool full_rank = false;
  std::vector<Index> uncovered_columns;
};

/// Numerical rank (singular values > 1e-10 * largest) of dU_n/dbeta at
/// `beta_probe`, and the maximal columns that no study maps.
IdentifiabilityReport identifiability_check(const MomentSystem& system, const VectorXd& beta_probe);

/// Dispersion moments for gaussian studies at maximal dispersion `phi`:
/// u (the moment vector), and first and second derivatives of q_n in phi.
struct DispersionMoments {
  VectorXd u;
  VectorXd dq;
  VectorXd d2q;
};

DispersionMoments dispersion_moments(double phi, const MomentSystem& system, const VectorXd& beta_hat);

/// One Newton step for the maximal dispersion. `weighting` is K x K; pass an
/// empty matrix for the identity. Throws DispersionError for families with
/// known dispersion and ConvergenceError when the curvature vanishes.
double dispersion_step(double phi_t, const MomentSystem& system, const MatrixXd& weighting,
                       const VectorXd& beta_hat);

struct DispersionFit {
  double phi = 0.0;
  int iterations = 0;
  double gradient = 0.0;  // U_n(phi)' C dq_n at the returned phi
};

DispersionFit fit_dispersion(const MomentSystem& system, const VectorXd& beta_hat, double phi0,
                             const MatrixXd& weighting, const GmetaConfig& config = {});

}  // namespace gmeta
