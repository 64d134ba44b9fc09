#include "gmeta/gmm.hpp"

#include <cmath>
#include <set>
#include <string>

#include "gmeta/errors.hpp"
#include "gmeta/linalg.hpp"

namespace gmeta {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::gmeta0:
      return "gmeta0";
    case Variant::gmeta1:
      return "gmeta1";
    case Variant::gmeta2:
      return "gmeta2";
  }
  return "unknown";
}

Variant variant_from_string(std::string_view name) {
  if (name == "gmeta0") return Variant::gmeta0;
  if (name == "gmeta1") return Variant::gmeta1;
  if (name == "gmeta2") return Variant::gmeta2;
  throw ParseError("unknown variant '" + std::string(name) + "'");
}

std::string_view to_string(HessianMode m) {
  return m == HessianMode::full_newton ? "full-newton" : "gauss-newton";
}

HessianMode hessian_mode_from_string(std::string_view name) {
  if (name == "full-newton") return HessianMode::full_newton;
  if (name == "gauss-newton") return HessianMode::gauss_newton;
  throw ParseError("unknown hessian mode '" + std::string(name) + "'");
}

std::string_view to_string(WeightingProvenance p) {
  switch (p) {
    case WeightingProvenance::identity:
      return "identity";
    case WeightingProvenance::optimal_ref:
      return "optimal-ref";
    case WeightingProvenance::optimal_study:
      return "optimal-study";
    case WeightingProvenance::user:
      return "user";
  }
  return "unknown";
}

void WeightingMatrix::validate() const {
  if (matrix.rows() != matrix.cols()) throw DimensionError("weighting matrix is not square");
  if (!matrix.allFinite()) throw DimensionError("weighting matrix has non-finite entries");
  if (!is_symmetric_psd(matrix, 1e-10, 1e-8)) {
    throw DimensionError("weighting matrix is not symmetric positive semi-definite");
  }
}

void GmetaConfig::validate() const {
  if (!(inner_tolerance > 0.0) || !(outer_tolerance > 0.0) || !(ridge_epsilon > 0.0)) {
    throw ParseError("tolerances must be positive");
  }
  if (inner_max_iterations < 1 || outer_max_iterations < 1 || max_halvings < 0) {
    throw ParseError("iteration counts must be at least 1");
  }
}

namespace {

void check_weighting(const WeightingMatrix& c, const MomentSystem& system) {
  if (c.matrix.rows() != system.total_dim() || c.matrix.cols() != system.total_dim()) {
    throw DimensionError("weighting matrix must be " + std::to_string(system.total_dim()) +
                         " x " + std::to_string(system.total_dim()));
  }
}

// Second-derivative term of the objective Hessian (halved):
//   sum_j (C U)_j d^2 U_j / dbeta dbeta'.
MatrixXd curvature_term(const VectorXd& beta, const MomentSystem& system, const VectorXd& cu) {
  const Index n = system.reference_size();
  const Index p = system.maximal_dim();
  MatrixXd v = MatrixXd::Zero(p, p);
  for (std::size_t k = 0; k < system.study_count(); ++k) {
    const StudyBlock& b = system.block(k);
    const FamilySpec& f = system.study(k).family;
    const VectorXd eta = b.x_maximal * beta;
    const VectorXd proj = b.x_reduced * cu.segment(system.block_offset(k), b.x_reduced.cols());
    VectorXd weight(n);
    for (Index i = 0; i < n; ++i) weight(i) = f.inv_link_d2(eta(i)) / b.scale * proj(i);
    v += b.x_maximal.transpose() * weight.asDiagonal() * b.x_maximal;
  }
  return v / static_cast<double>(n);
}

std::optional<VectorXd> solve_spd(const MatrixXd& h, const VectorXd& rhs, double ridge_relative) {
  auto inv = invert_symmetric(h, ridge_relative);
  if (!inv) return std::nullopt;
  return VectorXd(inv->inverse * rhs);
}

struct StepOutcome {
  VectorXd beta;
  double objective;
  bool moved;
};

StepOutcome damped_step(const VectorXd& beta, const MomentSystem& system, const WeightingMatrix& c,
                        const GmetaConfig& config) {
  const VectorXd u = stacked_moment(beta, system);
  const MatrixXd g = jacobian_beta(beta, system);
  const VectorXd cu = c.matrix * u;
  const double q0 = u.dot(cu);
  const VectorXd half_grad = g.transpose() * cu;
  const MatrixXd gn = symmetrized(g.transpose() * c.matrix * g);

  std::optional<VectorXd> direction;
  if (config.hessian_mode == HessianMode::full_newton) {
    const MatrixXd full = symmetrized(gn + curvature_term(beta, system, cu));
    Eigen::LLT<MatrixXd> llt(full);
    if (llt.info() == Eigen::Success) {
      VectorXd d = -llt.solve(half_grad);
      if (d.allFinite() && half_grad.dot(d) <= 0.0) direction = std::move(d);
    }
  }
  if (!direction) {
    auto d = solve_spd(gn, half_grad, config.ridge_epsilon);
    if (!d) throw IdentifiabilityError("Hessian of the GMeta objective is singular after ridge");
    direction = -*d;
  }

  double step = 1.0;
  VectorXd next = beta + *direction;
  double q = objective(next, system, c);
  for (int h = 0; h < config.max_halvings && !(q <= q0); ++h) {
    step *= 0.5;
    next = beta + step * *direction;
    q = objective(next, system, c);
  }
  if (!(q <= q0)) return {beta, q0, false};
  return {next, q, true};
}

}  // namespace

double objective(const VectorXd& beta, const MomentSystem& system, const WeightingMatrix& weighting) {
  check_weighting(weighting, system);
  const VectorXd u = stacked_moment(beta, system);
  return u.dot(weighting.matrix * u);
}

VectorXd objective_gradient(const VectorXd& beta, const MomentSystem& system,
                            const WeightingMatrix& weighting) {
  check_weighting(weighting, system);
  const VectorXd u = stacked_moment(beta, system);
  return 2.0 * jacobian_beta(beta, system).transpose() * (weighting.matrix * u);
}

VectorXd newton_step_beta(const VectorXd& beta_t, const MomentSystem& system,
                          const WeightingMatrix& weighting, const GmetaConfig& config) {
  check_weighting(weighting, system);
  return damped_step(beta_t, system, weighting, config).beta;
}

MinimizeResult minimize_objective(const MomentSystem& system, const WeightingMatrix& weighting,
                                  const VectorXd& start, const GmetaConfig& config) {
  check_weighting(weighting, system);
  MinimizeResult res;
  res.beta = start;
  res.objective = objective(start, system, weighting);
  res.trace.push_back(res.objective);
  for (int it = 1; it <= config.inner_max_iterations; ++it) {
    StepOutcome s = damped_step(res.beta, system, weighting, config);
    const double change = (s.beta - res.beta).cwiseAbs().maxCoeff();
    res.beta = std::move(s.beta);
    res.objective = s.objective;
    res.iterations = it;
    res.trace.push_back(res.objective);
    if (change < config.inner_tolerance) return res;
  }
  throw ConvergenceError("GMeta inner iteration did not converge in " +
                             std::to_string(config.inner_max_iterations) + " steps",
                         res.beta, res.trace);
}

LambdaSource default_lambda_source(Variant variant, const MomentSystem& system) {
  switch (variant) {
    case Variant::gmeta1:
      return LambdaSource::reference;
    case Variant::gmeta2:
      return LambdaSource::study;
    case Variant::gmeta0:
      break;
  }
  for (const auto& s : system.studies()) {
    if (!s.covariance) return LambdaSource::reference;
  }
  return LambdaSource::study;
}

GmetaFit fit_gmeta(const MomentSystem& system, Variant variant, const GmetaConfig& config) {
  config.validate();
  const Index p = system.maximal_dim();
  const Index d = system.total_dim();
  const VectorXd zero = VectorXd::Zero(p);

  const IdentifiabilityReport ident = identifiability_check(system, zero);
  if (!ident.full_rank) {
    std::string msg = "moment Jacobian has rank " + std::to_string(ident.rank) + " < " +
                      std::to_string(p);
    if (!ident.uncovered_columns.empty()) {
      msg += "; columns in no study:";
      for (Index c : ident.uncovered_columns) {
        const auto& names = system.reference().column_names;
        msg += " " + (c < static_cast<Index>(names.size()) ? names[c] : std::to_string(c));
      }
    }
    throw IdentifiabilityError(msg);
  }

  // A lone study that fitted the maximal model solves U_n = 0 at its own estimate.
  VectorXd start = zero;
  if (system.study_count() == 1 && d == p && system.study(0).map.excluded_columns.empty()) {
    const StudySummary& s = system.study(0);
    for (Index j = 0; j < p; ++j) start(s.map.maximal_columns[j]) = s.theta_hat(j);
  }

  GmetaFit fit;
  fit.variant = variant;
  fit.weighting = WeightingMatrix::identity(d);
  MinimizeResult inner = minimize_objective(system, fit.weighting, start, config);
  fit.inner_iterations = inner.iterations;
  fit.objective_trace = inner.trace;
  fit.beta_hat = inner.beta;
  fit.objective_value = inner.objective;

  if (variant != Variant::gmeta0) {
    const LambdaSource source = default_lambda_source(variant, system);
    const WeightingProvenance prov = source == LambdaSource::reference
                                         ? WeightingProvenance::optimal_ref
                                         : WeightingProvenance::optimal_study;
    bool done = false;
    for (int outer = 1; outer <= config.outer_max_iterations && !done; ++outer) {
      const MatrixXd m = delta_hat(fit.beta_hat, system) + lambda_hat(fit.beta_hat, system, source);
      auto inv = invert_symmetric(m, config.ridge_epsilon);
      if (!inv) throw IdentifiabilityError("Delta_hat + Lambda_hat is singular after ridge");
      fit.weighting = WeightingMatrix{std::move(inv->inverse), prov};

      inner = minimize_objective(system, fit.weighting, fit.beta_hat, config);
      fit.inner_iterations += inner.iterations;
      fit.objective_trace.insert(fit.objective_trace.end(), inner.trace.begin(), inner.trace.end());
      const double change = (inner.beta - fit.beta_hat).cwiseAbs().maxCoeff();
      fit.beta_hat = inner.beta;
      fit.objective_value = inner.objective;
      fit.outer_iterations = outer;
      done = change < config.outer_tolerance;
    }
    if (!done) {
      throw ConvergenceError("GMeta weighting iteration did not converge in " +
                                 std::to_string(config.outer_max_iterations) + " rounds",
                             fit.beta_hat, fit.objective_trace);
    }
  }
  fit.converged = true;
  fit.covariance = asymptotic_covariance(fit, system, default_lambda_source(variant, system));
  return fit;
}

MatrixXd asymptotic_covariance(const GmetaFit& fit, const MomentSystem& system, LambdaSource source) {
  const double n = static_cast<double>(system.reference_size());
  const MatrixXd gamma = jacobian_beta(fit.beta_hat, system);
  const MatrixXd middle = delta_hat(fit.beta_hat, system) + lambda_hat(fit.beta_hat, system, source);

  const bool optimal =
      (source == LambdaSource::reference && fit.weighting.provenance == WeightingProvenance::optimal_ref) ||
      (source == LambdaSource::study && fit.weighting.provenance == WeightingProvenance::optimal_study);
  if (optimal) {
    auto m_inv = invert_symmetric(middle / n, 1e-10);
    if (!m_inv) throw IdentifiabilityError("moment covariance is singular");
    auto cov = invert_symmetric(gamma.transpose() * m_inv->inverse * gamma, 0.0);
    if (!cov) throw IdentifiabilityError("Gamma' M^{-1} Gamma is singular");
    return cov->inverse;
  }

  check_weighting(fit.weighting, system);
  const MatrixXd& c = fit.weighting.matrix;
  auto bread = invert_symmetric(gamma.transpose() * c * gamma, 0.0);
  if (!bread) throw IdentifiabilityError("Gamma' C Gamma is singular");
  const MatrixXd a = bread->inverse * gamma.transpose() * c;
  return symmetrized(a * middle * a.transpose() / n);
}

IdentifiabilityReport identifiability_check(const MomentSystem& system, const VectorXd& beta_probe) {
  IdentifiabilityReport report;
  report.rank = numerical_rank(jacobian_beta(beta_probe, system), 1e-10);
  report.full_rank = report.rank == system.maximal_dim();
  std::set<Index> covered;
  for (const auto& s : system.studies()) covered.insert(s.map.maximal_columns.begin(), s.map.maximal_columns.end());
  for (Index c = 0; c < system.maximal_dim(); ++c) {
    if (!covered.count(c)) report.uncovered_columns.push_back(c);
  }
  return report;
}

namespace {

// For a gaussian maximal model with dispersion phi, E[Y^2 | x] = mu^2 + phi,
// which makes q_ki linear in phi.
void require_unknown_dispersion(const MomentSystem& system) {
  if (system.maximal_family().kind() != FamilyKind::gaussian_identity) {
    throw DispersionError("dispersion is known for " + std::string(system.maximal_family().name()));
  }
}

MatrixXd weighting_or_identity(const MatrixXd& w, Index k) {
  if (w.size() == 0) return MatrixXd::Identity(k, k);
  if (w.rows() != k || w.cols() != k) {
    throw DimensionError("dispersion weighting must be " + std::to_string(k) + " x " + std::to_string(k));
  }
  return w;
}

}  // namespace

DispersionMoments dispersion_moments(double phi, const MomentSystem& system, const VectorXd& beta_hat) {
  require_unknown_dispersion(system);
  const Index kk = static_cast<Index>(system.study_count());
  const Index n = system.reference_size();
  DispersionMoments m{VectorXd::Zero(kk), VectorXd::Zero(kk), VectorXd::Zero(kk)};
  for (std::size_t k = 0; k < system.study_count(); ++k) {
    const StudySummary& s = system.study(k);
    const StudyBlock& b = system.block(k);
    const FamilySpec& f = s.family;
    const double phi_k = s.dispersion_scale();
    const double a = f.a(phi_k);
    const VectorXd eta = b.x_maximal * beta_hat;
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double psi_k = f.eta_to_psi(b.eta_reduced(i));
      const double mu = f.inv_link(eta(i));
      const double fixed = (f.b(psi_k) - mu * psi_k) * f.a_prime(phi_k) / (a * a);
      const double q = (mu * mu + phi) / (2.0 * phi_k * phi_k) - 0.5 / phi_k;
      sum += fixed + q;
    }
    m.u(k) = sum / static_cast<double>(n);
    m.dq(k) = 0.5 / (phi_k * phi_k);
    m.d2q(k) = 0.0;
  }
  return m;
}

double dispersion_step(double phi_t, const MomentSystem& system, const MatrixXd& weighting,
                       const VectorXd& beta_hat) {
  const DispersionMoments m = dispersion_moments(phi_t, system, beta_hat);
  const MatrixXd c = weighting_or_identity(weighting, m.u.size());
  const double grad = m.u.dot(c * m.dq);
  const double curv = m.u.dot(c * m.d2q) + m.dq.dot(c * m.dq);
  if (!(std::abs(curv) > 1e-300) || !std::isfinite(curv)) {
    throw ConvergenceError("dispersion curvature vanished", VectorXd::Constant(1, phi_t));
  }
  return phi_t - grad / curv;
}

DispersionFit fit_dispersion(const MomentSystem& system, const VectorXd& beta_hat, double phi0,
                             const MatrixXd& weighting, const GmetaConfig& config) {
  config.validate();
  DispersionFit fit;
  fit.phi = phi0;
  for (int it = 1; it <= config.inner_max_iterations; ++it) {
    const double next = dispersion_step(fit.phi, system, weighting, beta_hat);
    const double change = std::abs(next - fit.phi);
    fit.phi = next;
    fit.iterations = it;
    if (change < config.inner_tolerance * std::max(1.0, std::abs(next))) break;
    if (it == config.inner_max_iterations) {
      throw ConvergenceError("dispersion iteration did not converge", VectorXd::Constant(1, fit.phi));
    }
  }
  const DispersionMoments m = dispersion_moments(fit.phi, system, beta_hat);
  fit.gradient = m.u.dot(weighting_or_identity(weighting, m.u.size()) * m.dq);
  if (!(fit.phi > 0.0)) {
    throw DispersionError("estimated maximal dispersion is not positive (" + std::to_string(fit.phi) + ")");
  }
  return fit;
}

}  // namespace gmeta
