#include "gmeta/moments.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "gmeta/errors.hpp"
#include "gmeta/linalg.hpp"

namespace gmeta {

namespace {

void check_beta(const VectorXd& beta, Index p) {
  if (beta.size() != p) {
    throw DimensionError("beta has length " + std::to_string(beta.size()) + ", expected " +
                         std::to_string(p));
  }
}

// Conditional second moment E[(Y - mu_reduced)^2 | x] under the maximal model.
double conditional_sq_residual(const FamilySpec& family, double eta_max, double mu_reduced,
                               std::optional<double> maximal_dispersion) {
  const double mu = family.inv_link(eta_max);
  double var = 0.0;
  if (family.kind() == FamilyKind::bernoulli_logit) {
    var = mu * (1.0 - mu);
  } else {
    if (!maximal_dispersion) {
      throw DispersionError("reference-based Lambda for a gaussian study needs the maximal dispersion");
    }
    var = family.variance(eta_max, *maximal_dispersion);
  }
  const double diff = mu - mu_reduced;
  return var + diff * diff;
}

}  // namespace

double StudySummary::dispersion_scale() const {
  if (family.kind() == FamilyKind::bernoulli_logit) return 1.0;
  if (dispersion) return family.a(*dispersion);
  if (auto phi = family.dispersion()) return family.a(*phi);
  throw DispersionError("study '" + map.study_id +
                        "' has unknown dispersion; supply it or derive it from standardized outcomes");
}

std::optional<Index> ReferenceSample::find_column(const std::string& name) const {
  auto it = std::find(column_names.begin(), column_names.end(), name);
  if (it == column_names.end()) return std::nullopt;
  return static_cast<Index>(it - column_names.begin());
}

void ReferenceSample::validate() const {
  if (design.rows() < 1 || design.cols() < 1) throw DimensionError("reference sample is empty");
  if (!design.allFinite()) throw DimensionError("reference sample contains non-finite entries");
  if (!column_names.empty() && static_cast<Index>(column_names.size()) != design.cols()) {
    throw DimensionError("reference column names do not match the design width");
  }
}

void validate_study(const StudySummary& study, Index p) {
  const auto& id = study.map.study_id;
  const Index dk = study.map.reduced_dimension();
  if (dk == 0) throw DimensionError("study '" + id + "' maps no columns");
  if (study.theta_hat.size() != dk) {
    throw DimensionError("study '" + id + "': theta_hat length " +
                         std::to_string(study.theta_hat.size()) + " does not match " +
                         std::to_string(dk) + " mapped columns");
  }
  if (!study.theta_hat.allFinite()) throw DimensionError("study '" + id + "': non-finite theta_hat");
  std::set<Index> seen;
  for (Index c : study.map.maximal_columns) {
    if (c < 0 || c >= p) {
      throw DimensionError("study '" + id + "': column index " + std::to_string(c) +
                           " outside the maximal design");
    }
    if (!seen.insert(c).second) {
      throw DimensionError("study '" + id + "': duplicate column index " + std::to_string(c));
    }
  }
  for (Index c : study.map.excluded_columns) {
    if (c < 0 || c >= p || seen.count(c)) {
      throw DimensionError("study '" + id + "': invalid excluded column " + std::to_string(c));
    }
  }
  if (!(study.n >= 1.0)) throw DimensionError("study '" + id + "': n_k must be at least 1");
  if (study.covariance) {
    const MatrixXd& s = *study.covariance;
    if (s.rows() != dk || s.cols() != dk) {
      throw DimensionError("study '" + id + "': covariance is not d_k x d_k");
    }
    if (!is_symmetric_psd(s, 1e-8, 1e-8)) {
      throw DimensionError("study '" + id + "': covariance is not symmetric positive semi-definite");
    }
  }
}

StudyBlock make_study_block(const StudySummary& study, const ReferenceSample& reference) {
  validate_study(study, reference.cols());
  const Index n = reference.rows();
  StudyBlock block;
  block.x_maximal = reference.design;
  for (Index c : study.map.excluded_columns) block.x_maximal.col(c).setZero();
  block.x_reduced.resize(n, study.map.reduced_dimension());
  for (Index j = 0; j < study.map.reduced_dimension(); ++j) {
    block.x_reduced.col(j) = reference.design.col(study.map.maximal_columns[j]);
  }
  block.eta_reduced = block.x_reduced * study.theta_hat;
  block.mu_reduced.resize(n);
  for (Index i = 0; i < n; ++i) block.mu_reduced(i) = study.family.inv_link(block.eta_reduced(i));
  // a(phi_k) b''(psi) g'(b'(psi)) collapses to a(phi_k) for canonical links.
  block.scale = study.dispersion_scale();
  return block;
}

MomentSystem::MomentSystem(std::vector<StudySummary> studies, ReferenceSample reference,
                           std::optional<double> maximal_dispersion)
    : studies_(std::move(studies)),
      reference_(std::move(reference)),
      maximal_dispersion_(maximal_dispersion) {
  if (studies_.empty()) throw DimensionError("moment system needs at least one study");
  reference_.validate();
  const FamilyKind kind = studies_.front().family.kind();
  for (const auto& s : studies_) {
    if (s.family.kind() != kind) {
      throw UnsupportedFamilyError("all studies must share the maximal model's family");
    }
  }
  if (maximal_dispersion_ && !(*maximal_dispersion_ > 0.0)) {
    throw DispersionError("maximal dispersion must be positive");
  }
  for (const auto& s : studies_) {
    offsets_.push_back(total_dim_);
    blocks_.push_back(make_study_block(s, reference_));
    total_dim_ += s.map.reduced_dimension();
  }
  if (total_dim_ < maximal_dim()) {
    std::string msg = "fewer moment equations (" + std::to_string(total_dim_) + ") than maximal parameters (" +
                      std::to_string(maximal_dim()) + ")";
    for (Index j = 0; j < maximal_dim(); ++j) {
      const bool used = std::any_of(studies_.begin(), studies_.end(), [&](const StudySummary& s) {
        return std::find(s.map.maximal_columns.begin(), s.map.maximal_columns.end(), j) !=
               s.map.maximal_columns.end();
      });
      if (used) continue;
      const std::string name =
          reference_.column_names.empty() ? std::to_string(j) : reference_.column_names[static_cast<std::size_t>(j)];
      msg += "; column '" + name + "' is in no study";
    }
    throw IdentifiabilityError(msg);
  }
}

double MomentSystem::ratio(std::size_t k) const {
  return study(k).n / static_cast<double>(reference_size());
}

VectorXd moment_u_k(const VectorXd& x_row, const VectorXd& beta, const StudySummary& study) {
  if (x_row.size() != beta.size()) throw DimensionError("moment_u_k: x_row and beta differ in length");
  validate_study(study, x_row.size());
  VectorXd x_eff = x_row;
  for (Index c : study.map.excluded_columns) x_eff(c) = 0.0;
  const Index dk = study.map.reduced_dimension();
  VectorXd x_a(dk);
  for (Index j = 0; j < dk; ++j) x_a(j) = x_row(study.map.maximal_columns[j]);

  const FamilySpec& f = study.family;
  const double eta_a = x_a.dot(study.theta_hat);
  const double r = (f.inv_link(x_eff.dot(beta)) - f.inv_link(eta_a)) / study.dispersion_scale();
  return r * x_a;
}

MatrixXd moment_rows(const VectorXd& beta, const MomentSystem& system) {
  check_beta(beta, system.maximal_dim());
  const Index n = system.reference_size();
  MatrixXd rows(n, system.total_dim());
  for (std::size_t k = 0; k < system.study_count(); ++k) {
    const StudyBlock& b = system.block(k);
    const FamilySpec& f = system.study(k).family;
    const VectorXd eta = b.x_maximal * beta;
    VectorXd r(n);
    for (Index i = 0; i < n; ++i) r(i) = (f.inv_link(eta(i)) - b.mu_reduced(i)) / b.scale;
    rows.middleCols(system.block_offset(k), b.x_reduced.cols()) = r.asDiagonal() * b.x_reduced;
  }
  return rows;
}

VectorXd stacked_moment(const VectorXd& beta, const MomentSystem& system) {
  check_beta(beta, system.maximal_dim());
  const Index n = system.reference_size();
  VectorXd u(system.total_dim());
  for (std::size_t k = 0; k < system.study_count(); ++k) {
    const StudyBlock& b = system.block(k);
    const FamilySpec& f = system.study(k).family;
    const VectorXd eta = b.x_maximal * beta;
    VectorXd r(n);
    for (Index i = 0; i < n; ++i) r(i) = (f.inv_link(eta(i)) - b.mu_reduced(i)) / b.scale;
    u.segment(system.block_offset(k), b.x_reduced.cols()) =
        b.x_reduced.transpose() * r / static_cast<double>(n);
  }
  return u;
}

MatrixXd jacobian_beta(const VectorXd& beta, const MomentSystem& system) {
  check_beta(beta, system.maximal_dim());
  const Index n = system.reference_size();
  MatrixXd g(system.total_dim(), system.maximal_dim());
  for (std::size_t k = 0; k < system.study_count(); ++k) {
    const StudyBlock& b = system.block(k);
    const FamilySpec& f = system.study(k).family;
    const VectorXd eta = b.x_maximal * beta;
    VectorXd w(n);
    for (Index i = 0; i < n; ++i) w(i) = f.inv_link_d1(eta(i)) / b.scale;
    g.middleRows(system.block_offset(k), b.x_reduced.cols()) =
        b.x_reduced.transpose() * w.asDiagonal() * b.x_maximal / static_cast<double>(n);
  }
  return g;
}

MatrixXd jacobian_theta_k(const VectorXd& beta, const StudySummary& study,
                          const ReferenceSample& reference) {
  check_beta(beta, reference.cols());
  const StudyBlock b = make_study_block(study, reference);
  const Index n = reference.rows();
  // Canonical links: the score denominator does not depend on theta_k.
  VectorXd w(n);
  for (Index i = 0; i < n; ++i) w(i) = study.family.inv_link_d1(b.eta_reduced(i)) / b.scale;
  return -(b.x_reduced.transpose() * w.asDiagonal() * b.x_reduced) / static_cast<double>(n);
}

MatrixXd delta_hat(const VectorXd& beta, const MomentSystem& system) {
  const MatrixXd rows = moment_rows(beta, system);
  return symmetrized(rows.transpose() * rows / static_cast<double>(system.reference_size()));
}

MatrixXd lambda_hat_ref(const VectorXd& beta, const StudySummary& study,
                        const ReferenceSample& reference, std::optional<double> maximal_dispersion) {
  check_beta(beta, reference.cols());
  const StudyBlock b = make_study_block(study, reference);
  const Index n = reference.rows();
  const VectorXd eta = b.x_maximal * beta;
  VectorXd w(n);
  for (Index i = 0; i < n; ++i) {
    w(i) = conditional_sq_residual(study.family, eta(i), b.mu_reduced(i), maximal_dispersion) /
           (b.scale * b.scale);
  }
  // (1/c_k) (1/n) sum = (1/n_k) sum.
  return symmetrized(b.x_reduced.transpose() * w.asDiagonal() * b.x_reduced / study.n);
}

MatrixXd lambda_hat_study(const VectorXd& beta, const StudySummary& study,
                          const ReferenceSample& reference) {
  if (!study.covariance) {
    throw MissingCovarianceError("study '" + study.map.study_id + "' did not report a covariance");
  }
  const MatrixXd w = jacobian_theta_k(beta, study, reference);
  return symmetrized(static_cast<double>(reference.rows()) * w * (*study.covariance) * w.transpose());
}

MatrixXd lambda_hat(const VectorXd& beta, const MomentSystem& system, LambdaSource source) {
  const Index d = system.total_dim();
  MatrixXd lambda = MatrixXd::Zero(d, d);
  for (std::size_t k = 0; k < system.study_count(); ++k) {
    const StudySummary& s = system.study(k);
    const Index off = system.block_offset(k);
    const Index dk = s.map.reduced_dimension();
    if (source == LambdaSource::study && s.covariance) {
      lambda.block(off, off, dk, dk) = lambda_hat_study(beta, s, system.reference());
    } else {
      lambda.block(off, off, dk, dk) =
          lambda_hat_ref(beta, s, system.reference(), system.maximal_dispersion());
    }
  }
  return lambda;
}

}  // namespace gmeta
