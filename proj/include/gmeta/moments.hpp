#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gmeta/family.hpp"

namespace gmeta {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Which maximal-design columns a study's reduced model used.
///
/// `maximal_columns` lists A_k in the order of the study's parameter vector.
/// `excluded_columns` are maximal columns that do not apply to the study's
/// population; they are zeroed when the maximal linear predictor is formed for
/// this study. Study-specific intercepts are expressed this way: the maximal
/// design carries one intercept column per study and every study excludes the
/// intercepts of the others.
struct CovariateMap {
  std::string study_id;
  std::vector<Index> maximal_columns;
  std::vector<Index> excluded_columns;

  Index reduced_dimension() const noexcept { return static_cast<Index>(maximal_columns.size()); }
};

/// Summary statistics published by one study. `covariance` is at
/// finite-sample scale (an estimate of Var(theta_hat)).
struct StudySummary {
  VectorXd theta_hat;
  std::optional<MatrixXd> covariance;
  double n = 1.0;
  FamilySpec family = FamilySpec::bernoulli_logit();
  CovariateMap map;
  std::optional<double> dispersion;

  /// a(phi_k): 1 for bernoulli-logit; the study dispersion (or the family's
  /// known value) for gaussian-identity. Throws DispersionError when needed
  /// but absent.
  double dispersion_scale() const;
};

/// Covariate-only reference data: n x p maximal design, intercept column(s)
/// included.
struct ReferenceSample {
  MatrixXd design;
  std::vector<std::string> column_names;

  Index rows() const noexcept { return design.rows(); }
  Index cols() const noexcept { return design.cols(); }
  std::optional<Index> find_column(const std::string& name) const;
  /// Throws DimensionError on an empty design, non-finite entries, or a
  /// column-name list of the wrong length.
  void validate() const;
};

/// Per-study matrices cached by MomentSystem.
struct StudyBlock {
  MatrixXd x_maximal;  // n x p, excluded columns zeroed
  MatrixXd x_reduced;  // n x d_k, the columns A_k
  VectorXd eta_reduced;  // x_A' theta_hat
  VectorXd mu_reduced;   // g^{-1}(x_A' theta_hat)
  double scale = 1.0;    // a(phi_k) b'' g' (constant for canonical links)
};

StudyBlock make_study_block(const StudySummary& study, const ReferenceSample& reference);

/// The stacked empirical moment system U_n(beta, theta_hat). Immutable after
/// construction.
class MomentSystem {
 public:
  /// `maximal_dispersion` is the maximal model's dispersion, needed only for
  /// reference-based Lambda with gaussian studies.
  MomentSystem(std::vector<StudySummary> studies, ReferenceSample reference,
               std::optional<double> maximal_dispersion = std::nullopt);

  const std::vector<StudySummary>& studies() const noexcept { return studies_; }
  const StudySummary& study(std::size_t k) const { return studies_.at(k); }
  const ReferenceSample& reference() const noexcept { return reference_; }
  const StudyBlock& block(std::size_t k) const { return blocks_.at(k); }
  std::size_t study_count() const noexcept { return studies_.size(); }

  Index total_dim() const noexcept { return total_dim_; }
  Index maximal_dim() const noexcept { return reference_.cols(); }
  Index reference_size() const noexcept { return reference_.rows(); }
  Index block_offset(std::size_t k) const { return offsets_.at(k); }
  /// c_k = n_k / n.
  double ratio(std::size_t k) const;
  const FamilySpec& maximal_family() const noexcept { return studies_.front().family; }
  std::optional<double> maximal_dispersion() const noexcept { return maximal_dispersion_; }

 private:
  std::vector<StudySummary> studies_;
  ReferenceSample reference_;
  std::optional<double> maximal_dispersion_;
  std::vector<StudyBlock> blocks_;
  std::vector<Index> offsets_;
  Index total_dim_ = 0;
};

/// Validates one study against a maximal design with `p` columns.
void validate_study(const StudySummary& study, Index p);

/// u_k(x; beta, theta_k) for one maximal-design row: the reduced-model score
/// averaged over Y | x under the maximal model.
VectorXd moment_u_k(const VectorXd& x_row, const VectorXd& beta, const StudySummary& study);

/// U_n(beta, theta_hat), length d.
VectorXd stacked_moment(const VectorXd& beta, const MomentSystem& system);

/// Per-row moment contributions U(x_i), an n x d matrix whose column means are
/// stacked_moment().
MatrixXd moment_rows(const VectorXd& beta, const MomentSystem& system);

/// dU_n / dbeta, d x p.
MatrixXd jacobian_beta(const VectorXd& beta, const MomentSystem& system);

/// W_k estimate: d u_k / d theta_k averaged over the reference, d_k x d_k.
MatrixXd jacobian_theta_k(const VectorXd& beta, const StudySummary& study,
                          const ReferenceSample& reference);

/// Delta_hat = (1/n) sum_i U(x_i) U(x_i)', d x d.
MatrixXd delta_hat(const VectorXd& beta, const MomentSystem& system);

/// Reference-based Lambda_k: (1/c_k) P_n E_{Y|X}[s_k s_k'] with the maximal
/// model at `beta` supplying the conditional law of Y.
MatrixXd lambda_hat_ref(const VectorXd& beta, const StudySummary& study,
                        const ReferenceSample& reference,
                        std::optional<double> maximal_dispersion = std::nullopt);

/// Study-based Lambda_k: n W_k S_k W_k'. Throws MissingCovarianceError when
/// the study did not report S_k.
MatrixXd lambda_hat_study(const VectorXd& beta, const StudySummary& study,
                          const ReferenceSample& reference);

enum class LambdaSource { reference, study };

/// Block-diagonal Lambda_hat. With LambdaSource::study, studies without a
/// covariance fall back to their reference-based block.
MatrixXd lambda_hat(const VectorXd& beta, const MomentSystem& system, LambdaSource source);

}  // namespace gmeta
