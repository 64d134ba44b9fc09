#pragma once

#include <vector>

#include <Eigen/Dense>

namespace gmeta {

struct MetaInput {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd covariance;  // finite-sample scale
};

struct MetaFit {
  Eigen::VectorXd estimate;
  Eigen::MatrixXd covariance;
  std::size_t k_studies = 0;
};

/// Inverse-variance-covariance weighted fixed-effect meta-analysis:
///   estimate = (sum S_k^{-1})^{-1} sum S_k^{-1} theta_k,  covariance = (sum S_k^{-1})^{-1}.
///
/// Studies are summed in a canonical order, so the result does not depend on
/// the order of `studies` (bit for bit). A covariance with condition number
/// above 1e12 raises SingularCovarianceError naming the study's input index.
MetaFit fixed_effect_meta(const std::vector<MetaInput>& studies);

}  // namespace gmeta
