#include "gmeta/linalg.hpp"

#include <cmath>

namespace gmeta {

namespace {

std::optional<MatrixXd> cholesky_inverse(const MatrixXd& a) {
  Eigen::LLT<MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  MatrixXd inv = llt.solve(MatrixXd::Identity(a.rows(), a.cols()));
  if (!inv.allFinite()) return std::nullopt;
  return symmetrized(inv);
}

}  // namespace

std::optional<SymmetricInverse> invert_symmetric(const MatrixXd& a, double ridge_relative) {
  const MatrixXd sym = symmetrized(a);
  if (auto inv = cholesky_inverse(sym)) return SymmetricInverse{std::move(*inv), 0.0};

  double scale = std::abs(sym.trace());
  if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
  const double ridge = ridge_relative * scale;
  MatrixXd ridged = sym;
  ridged.diagonal().array() += ridge;
  if (auto inv = cholesky_inverse(ridged)) return SymmetricInverse{std::move(*inv), ridge};
  return std::nullopt;
}

MatrixXd symmetrized(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

double min_eigenvalue(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrized(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_symmetric_psd(const MatrixXd& a, double rel_tol, double sym_tol) {
  if (a.rows() != a.cols() || !a.allFinite()) return false;
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > sym_tol * std::max(1.0, a.cwiseAbs().maxCoeff()))
    return false;
  return min_eigenvalue(a) >= -rel_tol * std::abs(a.trace());
}

Index numerical_rank(const MatrixXd& a, double rel_tol) {
  if (a.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(a);
  const VectorXd& s = svd.singularValues();
  const double cutoff = rel_tol * s(0);
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) ++rank;
  return rank;
}

double operator_norm(const MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatrixXd> svd(a);
  return svd.singularValues()(0);
}

}  // namespace gmeta
