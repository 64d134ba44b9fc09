#include "gmeta/family.hpp"

#include <cmath>
#include <numbers>

#include "gmeta/errors.hpp"

namespace gmeta {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// p (1 - p) for p = logistic(x), accurate in both tails.
double logistic_variance(double x) {
  const double e = std::exp(-std::abs(x));
  return e / ((1.0 + e) * (1.0 + e));
}

}  // namespace

std::string_view to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::bernoulli_logit:
      return "bernoulli_logit";
    case FamilyKind::gaussian_identity:
      return "gaussian_identity";
  }
  return "unknown";
}

FamilyKind family_kind_from_string(std::string_view name) {
  if (name == "bernoulli_logit" || name == "bernoulli-logit" || name == "logistic" || name == "binomial") {
    return FamilyKind::bernoulli_logit;
  }
  if (name == "gaussian_identity" || name == "gaussian-identity" || name == "gaussian" || name == "linear") {
    return FamilyKind::gaussian_identity;
  }
  throw UnsupportedFamilyError("unsupported family '" + std::string(name) + "'");
}

FamilySpec FamilySpec::bernoulli_logit() { return FamilySpec(FamilyKind::bernoulli_logit, 1.0); }

FamilySpec FamilySpec::gaussian_identity() {
  return FamilySpec(FamilyKind::gaussian_identity, std::nullopt);
}

FamilySpec FamilySpec::gaussian_identity(double phi) {
  if (!(phi > 0.0) || !std::isfinite(phi)) {
    throw DispersionError("gaussian dispersion must be positive and finite");
  }
  return FamilySpec(FamilyKind::gaussian_identity, phi);
}

FamilySpec FamilySpec::from_name(std::string_view name, std::optional<double> dispersion) {
  switch (family_kind_from_string(name)) {
    case FamilyKind::bernoulli_logit:
      return bernoulli_logit();
    case FamilyKind::gaussian_identity:
      return dispersion ? gaussian_identity(*dispersion) : gaussian_identity();
  }
  throw UnsupportedFamilyError(std::string(name));
}

double FamilySpec::a(double phi) const {
  return kind_ == FamilyKind::bernoulli_logit ? 1.0 : phi;
}

double FamilySpec::a_prime(double) const {
  return kind_ == FamilyKind::bernoulli_logit ? 0.0 : 1.0;
}

double FamilySpec::b(double psi) const {
  return kind_ == FamilyKind::bernoulli_logit ? softplus(psi) : 0.5 * psi * psi;
}

double FamilySpec::b1(double psi) const {
  return kind_ == FamilyKind::bernoulli_logit ? logistic(psi) : psi;
}

double FamilySpec::b2(double psi) const {
  return kind_ == FamilyKind::bernoulli_logit ? logistic_variance(psi) : 1.0;
}

double FamilySpec::c(double y, double phi) const {
  if (kind_ == FamilyKind::bernoulli_logit) return 0.0;
  return -0.5 * y * y / phi - 0.5 * std::log(2.0 * std::numbers::pi * phi);
}

double FamilySpec::dc_dphi(double y, double phi) const {
  if (kind_ == FamilyKind::bernoulli_logit) return 0.0;
  return 0.5 * y * y / (phi * phi) - 0.5 / phi;
}

double FamilySpec::canonical(double mu) const {
  if (kind_ == FamilyKind::bernoulli_logit) return std::log(mu) - std::log1p(-mu);
  return mu;
}

double FamilySpec::link(double mu) const { return canonical(mu); }

double FamilySpec::link_deriv(double mu) const {
  if (kind_ == FamilyKind::bernoulli_logit) return 1.0 / (mu * (1.0 - mu));
  return 1.0;
}

double FamilySpec::inv_link(double eta) const {
  return kind_ == FamilyKind::bernoulli_logit ? logistic(eta) : eta;
}

double FamilySpec::inv_link_d1(double eta) const {
  return kind_ == FamilyKind::bernoulli_logit ? logistic_variance(eta) : 1.0;
}

double FamilySpec::inv_link_d2(double eta) const {
  if (kind_ == FamilyKind::bernoulli_logit) {
    return logistic_variance(eta) * (1.0 - 2.0 * logistic(eta));
  }
  return 0.0;
}

double FamilySpec::log_density(double y, double eta, double phi) const {
  // psi == eta for both canonical links; avoids log(mu) round trips.
  return (y * eta - b(eta)) / a(phi) + c(y, phi);
}

bool FamilySpec::in_support(double y) const {
  if (kind_ == FamilyKind::bernoulli_logit) return y == 0.0 || y == 1.0;
  return std::isfinite(y);
}

}  // namespace gmeta
