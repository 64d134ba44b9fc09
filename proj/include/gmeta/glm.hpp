#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gmeta/family.hpp"

namespace gmeta {

struct IrwlsConfig {
  double tolerance = 1e-10;  // infinity norm of the coefficient change
  int max_iterations = 100;
  int max_halvings = 20;
  double separation_bound = 30.0;  // |coefficient| above this signals separation
};

/// Result of a maximum-likelihood GLM fit. Covariances are at finite-sample
/// scale, i.e. estimates of Var(theta_hat).
struct GlmFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd model_covariance;
  Eigen::MatrixXd sandwich_covariance;
  std::optional<double> dispersion_estimate;
  bool converged = false;
  int iterations = 0;
  std::vector<double> loglik_trace;  // log-likelihood after each accepted step
};

/// Maximum-likelihood fit by IRWLS (Fisher scoring) with step-halving.
///
/// Starts from zero for bernoulli-logit and from OLS for gaussian-identity.
/// Throws IdentifiabilityError for a rank-deficient design, SeparationError
/// when a coefficient leaves [-separation_bound, separation_bound], and
/// ConvergenceError when max_iterations is exhausted.
GlmFit fit_mle(const Eigen::MatrixXd& design, const Eigen::VectorXd& outcomes,
               const FamilySpec& family, const IrwlsConfig& config = {});

/// Per-observation score rows (y_i - mu_i) / (a(phi) b''(psi_i) g'(mu_i)) * x_i.
/// Uses the family's known dispersion, or 1 when it is unknown.
Eigen::MatrixXd score_contributions(const Eigen::VectorXd& params, const Eigen::MatrixXd& design,
                                    const Eigen::VectorXd& outcomes, const FamilySpec& family);
Eigen::MatrixXd score_contributions(const Eigen::VectorXd& params, const Eigen::MatrixXd& design,
                                    const Eigen::VectorXd& outcomes, const FamilySpec& family,
                                    double dispersion);

double log_likelihood(const Eigen::VectorXd& params, const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& outcomes, const FamilySpec& family,
                      double dispersion = 1.0);

/// a(phi_hat) for a study whose outcomes were standardized to unit variance:
///   [1 - var_n(g^{-1}(x' theta))]^{-1} * mean_n(b''(psi_hat)),
/// with the population (1/n) variance over the rows of `reference_design`
/// (already restricted to the study's columns). Throws DispersionError when
/// the fitted-mean variance is >= 1.
double dispersion_from_standardized(const Eigen::VectorXd& reduced_params,
                                    const Eigen::MatrixXd& reference_design,
                                    const FamilySpec& family);

}  // namespace gmeta
