#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace gmeta {

enum class FamilyKind { bernoulli_logit, gaussian_identity };

std::string_view to_string(FamilyKind kind);
FamilyKind family_kind_from_string(std::string_view name);

/// Exponential-family GLM with canonical link:
///   f(y) = exp{(y psi - b(psi)) / a(phi) + c(y; phi)},  g(b'(psi)) = eta.
///
/// Both supported families use their canonical link, so psi = eta and
/// b''(psi) * g'(b'(psi)) == 1. The general expressions are kept anyway so
/// the moment formulas read the same as their derivation.
class FamilySpec {
 public:
  static FamilySpec bernoulli_logit();
  /// Gaussian with unknown dispersion (residual variance).
  static FamilySpec gaussian_identity();
  /// Gaussian with known dispersion `phi` (> 0).
  static FamilySpec gaussian_identity(double phi);
  static FamilySpec from_name(std::string_view name, std::optional<double> dispersion = {});

  FamilyKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return to_string(kind_); }
  bool dispersion_known() const noexcept { return dispersion_.has_value(); }
  /// Known dispersion value; bernoulli-logit reports 1.
  std::optional<double> dispersion() const noexcept { return dispersion_; }

  double a(double phi) const;
  double a_prime(double phi) const;
  double b(double psi) const;
  double b1(double psi) const;  // b'(psi) = mean
  double b2(double psi) const;  // b''(psi) = variance function
  double c(double y, double phi) const;
  double dc_dphi(double y, double phi) const;

  /// Canonical parameter for a mean: (b')^{-1}(mu).
  double canonical(double mu) const;

  double link(double mu) const;          // g
  double link_deriv(double mu) const;    // g'
  double inv_link(double eta) const;     // g^{-1}
  double inv_link_d1(double eta) const;  // d g^{-1} / d eta
  double inv_link_d2(double eta) const;  // d^2 g^{-1} / d eta^2

  /// Conditional variance of Y given linear predictor `eta` under dispersion `phi`.
  double variance(double eta, double phi) const { return a(phi) * b2(eta_to_psi(eta)); }

  /// psi for a given linear predictor; the identity because both links are canonical.
  double eta_to_psi(double eta) const { return eta; }

  /// a(phi) * b''(psi) * g'(b'(psi)), the scale dividing every score residual.
  /// Canonical links make the last two factors cancel, leaving a(phi).
  double score_denominator(double /*eta*/, double phi) const { return a(phi); }

  /// Log density of y given linear predictor eta.
  double log_density(double y, double eta, double phi) const;

  /// True if y lies in the support of the family (0/1 for bernoulli).
  bool in_support(double y) const;

  bool operator==(const FamilySpec&) const = default;

 private:
  FamilySpec(FamilyKind kind, std::optional<double> dispersion)
      : kind_(kind), dispersion_(dispersion) {}

  FamilyKind kind_;
  std::optional<double> dispersion_;
};

/// Numerically stable logistic function.
double logistic(double x);

}  // namespace gmeta
