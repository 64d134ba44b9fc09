#include "gmeta/glm.hpp"

#include <cmath>
#include <string>

#include "gmeta/errors.hpp"
#include "gmeta/linalg.hpp"

namespace gmeta {

namespace {

void check_inputs(const MatrixXd& design, const VectorXd& outcomes, const FamilySpec& family) {
  if (design.rows() != outcomes.size()) {
    throw DimensionError("design has " + std::to_string(design.rows()) + " rows but " +
                         std::to_string(outcomes.size()) + " outcomes were given");
  }
  if (design.cols() == 0) throw DimensionError("design has no columns");
  if (!design.allFinite()) throw DimensionError("design contains non-finite entries");
  for (Index i = 0; i < outcomes.size(); ++i) {
    if (!family.in_support(outcomes(i))) {
      throw DimensionError("outcome " + std::to_string(i) + " is outside the support of " +
                           std::string(family.name()));
    }
  }
}

void check_rank(const MatrixXd& design) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (design.rows() < design.cols() || qr.rank() < design.cols()) {
    throw IdentifiabilityError("design matrix is rank deficient (rank " +
                               std::to_string(qr.rank()) + " < " +
                               std::to_string(design.cols()) + ")");
  }
}

void check_separation(const VectorXd& coef, double bound) {
  if (coef.cwiseAbs().maxCoeff() > bound || !coef.allFinite()) {
    throw SeparationError("coefficient magnitude exceeded " + std::to_string(bound) +
                          " (data appear separated)");
  }
}

MatrixXd inverse_or_throw(const MatrixXd& info) {
  auto inv = invert_symmetric(info, 0.0);
  if (!inv) throw IdentifiabilityError("information matrix is singular");
  return inv->inverse;
}

GlmFit fit_gaussian(const MatrixXd& x, const VectorXd& y) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (n <= d) throw IdentifiabilityError("gaussian fit needs more rows than columns");

  GlmFit fit;
  fit.coefficients = x.colPivHouseholderQr().solve(y);
  const VectorXd resid = y - x * fit.coefficients;
  const double phi = resid.squaredNorm() / static_cast<double>(n - d);
  fit.dispersion_estimate = phi;

  const MatrixXd xtx_inv = inverse_or_throw(x.transpose() * x);
  fit.model_covariance = phi * xtx_inv;
  const MatrixXd meat = x.transpose() * resid.array().square().matrix().asDiagonal() * x;
  fit.sandwich_covariance = symmetrized(xtx_inv * meat * xtx_inv);
  fit.converged = true;
  fit.iterations = 1;
  fit.loglik_trace.push_back(log_likelihood(fit.coefficients, x, y, FamilySpec::gaussian_identity(), phi));
  return fit;
}

GlmFit fit_canonical_irwls(const MatrixXd& x, const VectorXd& y, const FamilySpec& family,
                           const IrwlsConfig& cfg) {
  const Index d = x.cols();
  VectorXd coef = VectorXd::Zero(d);
  double ll = log_likelihood(coef, x, y, family);

  GlmFit fit;
  fit.loglik_trace.push_back(ll);
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const VectorXd eta = x * coef;
    VectorXd weight(eta.size());
    VectorXd resid(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      const double d1 = family.inv_link_d1(eta(i));
      const double v = family.b2(family.eta_to_psi(eta(i)));
      weight(i) = d1 * d1 / v;
      resid(i) = (y(i) - family.inv_link(eta(i))) * d1 / v;
    }
    const MatrixXd info = x.transpose() * weight.asDiagonal() * x;
    Eigen::LLT<MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) {
      // The design has full rank, so only vanishing weights can get here.
      throw SeparationError("IRWLS weights vanished; fitted probabilities reached 0 or 1 (separation)");
    }
    const VectorXd delta = llt.solve(x.transpose() * resid);

    double step = 1.0;
    VectorXd next = coef + delta;
    double ll_next = log_likelihood(next, x, y, family);
    // Changes below rounding error in the log-likelihood count as ties.
    const double slack = 1e-13 * (1.0 + std::abs(ll));
    for (int h = 0; h < cfg.max_halvings && !(ll_next >= ll - slack); ++h) {
      step *= 0.5;
      next = coef + step * delta;
      ll_next = log_likelihood(next, x, y, family);
    }
    if (!(ll_next >= ll - slack)) {
      // No improving step left: the iterate already sits at the numerical optimum.
      next = coef;
      ll_next = ll;
    }

    const double change = (next - coef).cwiseAbs().maxCoeff();
    coef = next;
    ll = ll_next;
    fit.loglik_trace.push_back(ll);
    fit.iterations = it;
    check_separation(coef, cfg.separation_bound);
    if (change < cfg.tolerance) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    throw ConvergenceError("IRWLS did not converge in " + std::to_string(cfg.max_iterations) +
                               " iterations",
                           coef, fit.loglik_trace);
  }

  fit.coefficients = coef;
  const VectorXd eta = x * coef;
  VectorXd weight(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    const double d1 = family.inv_link_d1(eta(i));
    weight(i) = d1 * d1 / family.b2(family.eta_to_psi(eta(i)));
  }
  // Canonical link: observed and expected information coincide.
  const MatrixXd info = x.transpose() * weight.asDiagonal() * x;
  if (weight.maxCoeff() < 1e-12) {
    throw SeparationError("fitted probabilities are all 0 or 1 (separation)");
  }
  const MatrixXd info_inv = inverse_or_throw(info);
  const MatrixXd scores = score_contributions(coef, x, y, family);
  fit.model_covariance = info_inv;
  fit.sandwich_covariance = symmetrized(info_inv * (scores.transpose() * scores) * info_inv);
  return fit;
}

}  // namespace

GlmFit fit_mle(const MatrixXd& design, const VectorXd& outcomes, const FamilySpec& family,
               const IrwlsConfig& config) {
  check_inputs(design, outcomes, family);
  check_rank(design);
  if (family.kind() == FamilyKind::gaussian_identity) return fit_gaussian(design, outcomes);
  return fit_canonical_irwls(design, outcomes, family, config);
}

MatrixXd score_contributions(const VectorXd& params, const MatrixXd& design,
                             const VectorXd& outcomes, const FamilySpec& family) {
  return score_contributions(params, design, outcomes, family, family.dispersion().value_or(1.0));
}

MatrixXd score_contributions(const VectorXd& params, const MatrixXd& design,
                             const VectorXd& outcomes, const FamilySpec& family,
                             double dispersion) {
  if (design.cols() != params.size() || design.rows() != outcomes.size()) {
    throw DimensionError("score_contributions: inconsistent dimensions");
  }
  const VectorXd eta = design * params;
  MatrixXd rows(design.rows(), design.cols());
  for (Index i = 0; i < design.rows(); ++i) {
    const double r =
        (outcomes(i) - family.inv_link(eta(i))) / family.score_denominator(eta(i), dispersion);
    rows.row(i) = r * design.row(i);
  }
  return rows;
}

double log_likelihood(const VectorXd& params, const MatrixXd& design, const VectorXd& outcomes,
                      const FamilySpec& family, double dispersion) {
  const VectorXd eta = design * params;
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) ll += family.log_density(outcomes(i), eta(i), dispersion);
  return ll;
}

double dispersion_from_standardized(const VectorXd& reduced_params, const MatrixXd& reference_design,
                                    const FamilySpec& family) {
  if (reference_design.cols() != reduced_params.size() || reference_design.rows() == 0) {
    throw DimensionError("dispersion_from_standardized: inconsistent dimensions");
  }
  const VectorXd eta = reference_design * reduced_params;
  const Index n = eta.size();
  VectorXd mu(n);
  double mean_b2 = 0.0;
  for (Index i = 0; i < n; ++i) {
    mu(i) = family.inv_link(eta(i));
    mean_b2 += family.b2(family.eta_to_psi(eta(i)));
  }
  mean_b2 /= static_cast<double>(n);
  const double var = (mu.array() - mu.mean()).square().mean();
  if (!(var < 1.0)) {
    throw DispersionError("fitted-mean variance " + std::to_string(var) +
                          " is not below 1; outcomes do not look standardized");
  }
  return mean_b2 / (1.0 - var);
}

}  // namespace gmeta
