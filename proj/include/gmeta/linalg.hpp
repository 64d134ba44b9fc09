#pragma once

#include <optional>

#include <Eigen/Dense>

namespace gmeta {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SymmetricInverse {
  MatrixXd inverse;
  double ridge = 0.0;  // absolute ridge added to the diagonal, 0 when none was needed
};

/// Inverts a symmetric positive (semi-)definite matrix with a Cholesky
/// factorization. When the factorization fails, `ridge_relative * trace(A)` is
/// added to the diagonal and the factorization retried once. Returns nullopt
/// if that also fails.
std::optional<SymmetricInverse> invert_symmetric(const MatrixXd& a, double ridge_relative);

/// Smallest eigenvalue of the symmetric part of `a`.
double min_eigenvalue(const MatrixXd& a);

/// True when `a` is symmetric to `sym_tol` (absolute) and its smallest
/// eigenvalue is at least `-rel_tol * |trace|`.
bool is_symmetric_psd(const MatrixXd& a, double rel_tol, double sym_tol = 1e-10);

/// (A + Aᵀ) / 2.
MatrixXd symmetrized(const MatrixXd& a);

/// Numerical rank: singular values above `rel_tol * largest`.
Index numerical_rank(const MatrixXd& a, double rel_tol);

/// Spectral (operator 2-) norm.
double operator_norm(const MatrixXd& a);

}  // namespace gmeta
