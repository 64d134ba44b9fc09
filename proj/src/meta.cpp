#include "gmeta/meta.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "gmeta/errors.hpp"
#include "gmeta/linalg.hpp"

namespace gmeta {

namespace {

constexpr double kMaxCondition = 1e12;

MatrixXd precision_of(const MatrixXd& s, std::size_t index) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(s));
  if (es.info() != Eigen::Success) {
    throw SingularCovarianceError("covariance of study " + std::to_string(index) + " could not be factorized", index);
  }
  const VectorXd& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxCondition) {
    throw SingularCovarianceError("covariance of study " + std::to_string(index) +
                                      " is singular or ill-conditioned",
                                  index);
  }
  return symmetrized(es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose());
}

// Lexicographic order on (theta, covariance) entries.
bool canonical_less(const MetaInput& a, const MetaInput& b) {
  const auto key = [](const MetaInput& m) {
    std::vector<double> k(m.theta_hat.data(), m.theta_hat.data() + m.theta_hat.size());
    k.insert(k.end(), m.covariance.data(), m.covariance.data() + m.covariance.size());
    return k;
  };
  return key(a) < key(b);
}

}  // namespace

MetaFit fixed_effect_meta(const std::vector<MetaInput>& studies) {
  if (studies.empty()) throw DimensionError("fixed_effect_meta needs at least one study");
  const Index d = studies.front().theta_hat.size();
  for (std::size_t k = 0; k < studies.size(); ++k) {
    const auto& s = studies[k];
    if (s.theta_hat.size() != d || s.covariance.rows() != d || s.covariance.cols() != d) {
      throw DimensionError("study " + std::to_string(k) + " does not match the common dimension " +
                           std::to_string(d));
    }
  }

  std::vector<std::size_t> order(studies.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return canonical_less(studies[a], studies[b]);
  });

  MatrixXd total_precision = MatrixXd::Zero(d, d);
  VectorXd weighted = VectorXd::Zero(d);
  for (std::size_t k : order) {
    const MatrixXd prec = precision_of(studies[k].covariance, k);
    total_precision += prec;
    weighted += prec * studies[k].theta_hat;
  }

  MetaFit fit;
  fit.k_studies = studies.size();
  fit.covariance = precision_of(total_precision, order.front());
  fit.estimate = fit.covariance * weighted;
  return fit;
}

}  // namespace gmeta
