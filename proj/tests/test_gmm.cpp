#include "doctest.h"

#include "gmeta/errors.hpp"
#include "gmeta/glm.hpp"
#include "gmeta/gmm.hpp"
#include "gmeta/linalg.hpp"
#include "oracles.hpp"

using namespace gmeta;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

StudySummary study(FamilySpec fam, std::vector<Index> cols, VectorXd theta, double n,
                   std::optional<MatrixXd> cov = std::nullopt) {
  StudySummary s;
  s.map.study_id = "s" + std::to_string(cols.size());
  s.map.maximal_columns = std::move(cols);
  s.theta_hat = std::move(theta);
  s.n = n;
  s.family = fam;
  s.covariance = std::move(cov);
  return s;
}

ReferenceSample reference_of(MatrixXd x) {
  ReferenceSample r;
  r.design = std::move(x);
  for (Index j = 0; j < r.design.cols(); ++j) r.column_names.push_back("c" + std::to_string(j));
  return r;
}

// Reduced-model limit of a logistic fit on columns `cols` when Y follows the
// maximal model at `beta`, with the reference as the covariate law.
VectorXd reduced_limit(const MatrixXd& x, const VectorXd& beta, const std::vector<Index>& cols) {
  MatrixXd xa(x.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) xa.col(static_cast<Index>(j)) = x.col(cols[j]);
  VectorXd theta = VectorXd::Zero(xa.cols());
  for (int it = 0; it < 50; ++it) {
    VectorXd score = VectorXd::Zero(xa.cols());
    MatrixXd info = MatrixXd::Zero(xa.cols(), xa.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      const double pa = oracle::sigmoid(xa.row(i).dot(theta));
      score += (oracle::sigmoid(x.row(i).dot(beta)) - pa) * xa.row(i).transpose();
      info += pa * (1.0 - pa) * xa.row(i).transpose() * xa.row(i);
    }
    theta += oracle::gauss_jordan_inverse(info) * score;
  }
  return theta;
}

struct Toy {
  ReferenceSample ref;
  std::vector<StudySummary> studies;
};

// Three logistic studies on overlapping subsets of four columns.
Toy random_toy(std::mt19937_64& rng, Index n_ref = 40) {
  Toy t;
  t.ref = reference_of(oracle::random_design(rng, n_ref, 4));
  VectorXd beta = oracle::random_matrix(rng, 4, 1, 0.5).col(0);
  const std::vector<std::vector<Index>> maps{{0, 1, 2}, {0, 1, 3}, {0, 2, 3}};
  const double sizes[] = {300, 500, 1000};
  for (std::size_t k = 0; k < 3; ++k) {
    VectorXd th = reduced_limit(t.ref.design, beta, maps[k]) + oracle::random_matrix(rng, 3, 1, 0.05).col(0);
    MatrixXd cov = oracle::random_spd(rng, 3) / sizes[k];
    t.studies.push_back(study(FamilySpec::bernoulli_logit(), maps[k], th, sizes[k], cov));
  }
  return t;
}

}  // namespace

TEST_CASE("objective: worked examples") {
  std::mt19937_64 rng(1);
  const auto ref = reference_of(oracle::random_design(rng, 12, 3));
  const VectorXd beta = oracle::random_matrix(rng, 3, 1).col(0);
  const MomentSystem exact({study(FamilySpec::bernoulli_logit(), {0, 1, 2}, beta, 100)}, ref);
  CHECK(objective(beta, exact, WeightingMatrix::identity(3)) == 0.0);

  Toy t = random_toy(rng);
  const MomentSystem sys(t.studies, t.ref);
  const VectorXd b = oracle::random_matrix(rng, 4, 1, 0.5).col(0);
  const VectorXd u = stacked_moment(b, sys);
  CHECK(objective(b, sys, WeightingMatrix::identity(9)) == doctest::Approx(u.squaredNorm()).epsilon(1e-14));

  const MatrixXd c = oracle::random_spd(rng, 9);
  double naive = 0.0;
  for (Index i = 0; i < 9; ++i) {
    for (Index j = 0; j < 9; ++j) naive += u(i) * c(i, j) * u(j);
  }
  CHECK(std::abs(objective(b, sys, WeightingMatrix{c, WeightingProvenance::user}) - naive) < 1e-14);
}

TEST_CASE("objective_gradient matches finite differences") {
  std::mt19937_64 rng(2);
  Toy t = random_toy(rng);
  const MomentSystem sys(t.studies, t.ref);
  const WeightingMatrix c{oracle::random_spd(rng, 9), WeightingProvenance::user};
  const VectorXd b = oracle::random_matrix(rng, 4, 1, 0.5).col(0);
  const VectorXd fd = oracle::fd_gradient([&](const VectorXd& v) { return objective(v, sys, c); }, b);
  CHECK(oracle::max_rel_diff(objective_gradient(b, sys, c), fd, 1e-6) < 1e-5);
}

TEST_CASE("newton_step_beta: gaussian exactly identified system is solved in one step") {
  std::mt19937_64 rng(3);
  const MatrixXd x = oracle::random_design(rng, 30, 3);
  auto s1 = study(FamilySpec::gaussian_identity(), {0, 1}, oracle::random_matrix(rng, 2, 1).col(0), 200);
  auto s2 = study(FamilySpec::gaussian_identity(), {2}, oracle::random_matrix(rng, 1, 1).col(0), 200);
  s1.dispersion = 1.3;
  s2.dispersion = 0.8;
  const MomentSystem sys({s1, s2}, reference_of(x));
  // Stacked moments are linear: U(beta) = G beta - U0 with constant G.
  const MatrixXd g = jacobian_beta(VectorXd::Zero(3), sys);
  const VectorXd root = oracle::gauss_jordan_inverse(g) * (-stacked_moment(VectorXd::Zero(3), sys));
  const VectorXd step = newton_step_beta(VectorXd::Zero(3), sys, WeightingMatrix::identity(3), GmetaConfig{});
  CHECK(oracle::max_abs_diff(step, root) < 1e-10);
}

TEST_CASE("newton_step_beta: zero step at the single-study minimizer") {
  std::mt19937_64 rng(4);
  const VectorXd theta = oracle::random_matrix(rng, 3, 1, 0.5).col(0);
  const MomentSystem sys({study(FamilySpec::bernoulli_logit(), {0, 1, 2}, theta, 100)},
                         reference_of(oracle::random_design(rng, 25, 3)));
  const VectorXd next = newton_step_beta(theta, sys, WeightingMatrix::identity(3), GmetaConfig{});
  CHECK(oracle::max_abs_diff(next, theta) == 0.0);
}

TEST_CASE("minimize_objective: 2-study toy matches a Nelder-Mead minimizer") {
  std::mt19937_64 rng(5);
  const auto ref = reference_of(oracle::random_design(rng, 60, 3));
  VectorXd t1(3), t2(3);
  t1 << 0.2, 0.5, -0.3;
  t2 << -0.3, 0.9, 0.2;
  const MomentSystem sys({study(FamilySpec::bernoulli_logit(), {0, 1, 2}, t1, 300),
                          study(FamilySpec::bernoulli_logit(), {0, 1, 2}, t2, 500)},
                         ref);
  const auto c = WeightingMatrix::identity(6);
  const MinimizeResult res = minimize_objective(sys, c, VectorXd::Zero(3), GmetaConfig{});
  const VectorXd nm = oracle::nelder_mead([&](const VectorXd& b) { return objective(b, sys, c); },
                                          VectorXd::Zero(3), 0.5, 1e-15, 100000);
  CHECK(oracle::max_abs_diff(res.beta, nm) < 1e-6);
}

TEST_CASE("minimize_objective: monotone trace and vanishing gradient over 100 random instances") {
  std::mt19937_64 rng(6);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    Toy t = random_toy(rng, 30);
    const MomentSystem sys(t.studies, t.ref);
    const WeightingMatrix c{oracle::random_spd(rng, 9, 0.2), WeightingProvenance::user};
    const MinimizeResult res = minimize_objective(sys, c, VectorXd::Zero(4), GmetaConfig{});
    for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i] <= res.trace[i - 1]);
    CHECK(objective_gradient(res.beta, sys, c).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + std::abs(res.objective)));
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("minimize_objective: scaling C leaves the endpoint unchanged") {
  std::mt19937_64 rng(7);
  Toy t = random_toy(rng);
  const MomentSystem sys(t.studies, t.ref);
  const MatrixXd c = oracle::random_spd(rng, 9);
  const auto a = minimize_objective(sys, {c, WeightingProvenance::user}, VectorXd::Zero(4), GmetaConfig{});
  for (double gamma : {1e-3, 7.0, 250.0}) {
    const auto b = minimize_objective(sys, {gamma * c, WeightingProvenance::user}, VectorXd::Zero(4), GmetaConfig{});
    CHECK(oracle::max_abs_diff(a.beta, b.beta) < 1e-10);
  }
}

TEST_CASE("full Newton and Gauss-Newton reach the same minimizer") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    Toy t = random_toy(rng);
    const MomentSystem sys(t.studies, t.ref);
    GmetaConfig full;
    full.hessian_mode = HessianMode::full_newton;
    const auto c = WeightingMatrix::identity(9);
    const auto a = minimize_objective(sys, c, VectorXd::Zero(4), GmetaConfig{});
    const auto b = minimize_objective(sys, c, VectorXd::Zero(4), full);
    CHECK(oracle::max_abs_diff(a.beta, b.beta) < 1e-8);
    CHECK(std::abs(a.objective - b.objective) < 1e-12 * (1.0 + a.objective));
  }
}

TEST_CASE("fit_gmeta: single study fitting the maximal model returns theta exactly") {
  std::mt19937_64 rng(9);
  const VectorXd theta = oracle::random_matrix(rng, 3, 1, 0.5).col(0);
  const MatrixXd cov = oracle::random_spd(rng, 3) / 400.0;
  const MomentSystem sys({study(FamilySpec::bernoulli_logit(), {0, 1, 2}, theta, 400, cov)},
                         reference_of(oracle::random_design(rng, 50, 3)));
  for (Variant v : {Variant::gmeta0, Variant::gmeta1, Variant::gmeta2}) {
    const GmetaFit fit = fit_gmeta(sys, v);
    CHECK(fit.converged);
    CHECK((fit.beta_hat.array() == theta.array()).all());
    CHECK(fit.objective_value == 0.0);
  }
  // Delta vanishes, so the study-based covariance is the study's own S.
  const GmetaFit fit2 = fit_gmeta(sys, Variant::gmeta2);
  CHECK(oracle::max_rel_diff(fit2.covariance, cov, 1e-6) < 1e-8);
}

TEST_CASE("fit_gmeta: exactly identified system matches a root finder") {
  std::mt19937_64 rng(10);
  const MatrixXd x = oracle::random_design(rng, 80, 3);
  VectorXd beta(3);
  beta << 0.1, 0.6, -0.4;
  VectorXd t1 = reduced_limit(x, beta, {0, 1});
  VectorXd t2 = reduced_limit(x, beta, {2});
  t1(1) += 0.05;
  t2(0) -= 0.03;
  const MomentSystem sys({study(FamilySpec::bernoulli_logit(), {0, 1}, t1, 300),
                          study(FamilySpec::bernoulli_logit(), {2}, t2, 300)},
                         reference_of(x));
  const VectorXd root = oracle::fd_newton_root([&](const VectorXd& b) { return stacked_moment(b, sys); },
                                               VectorXd::Zero(3), 1e-15, 100);
  for (Variant v : {Variant::gmeta0, Variant::gmeta1}) {
    CHECK(oracle::max_abs_diff(fit_gmeta(sys, v).beta_hat, root) < 1e-8);
  }
}

TEST_CASE("fit_gmeta: outer iteration reaches a fixed point of the optimal weighting") {
  std::mt19937_64 rng(11);
  Toy t = random_toy(rng, 200);
  const MomentSystem sys(t.studies, t.ref);
  for (Variant v : {Variant::gmeta1, Variant::gmeta2}) {
    const GmetaFit fit = fit_gmeta(sys, v);
    CHECK(fit.converged);
    CHECK(fit.outer_iterations >= 1);
    const LambdaSource src = v == Variant::gmeta1 ? LambdaSource::reference : LambdaSource::study;
    const MatrixXd m = delta_hat(fit.beta_hat, sys) + lambda_hat(fit.beta_hat, sys, src);
    const auto next = minimize_objective(sys, {oracle::gauss_jordan_inverse(m), WeightingProvenance::user},
                                         fit.beta_hat, GmetaConfig{});
    CHECK(oracle::max_abs_diff(next.beta, fit.beta_hat) < 1e-7);
    CHECK(is_symmetric_psd(fit.covariance, 1e-10));
    CHECK(fit.objective_value >= 0.0);
  }
}

TEST_CASE("fit_gmeta: identifiability failure lists the uncovered column") {
  std::mt19937_64 rng(12);
  const auto ref = reference_of(oracle::random_design(rng, 30, 4));
  const MomentSystem sys({study(FamilySpec::bernoulli_logit(), {0, 1, 2}, VectorXd::Zero(3), 100),
                          study(FamilySpec::bernoulli_logit(), {0, 1}, VectorXd::Zero(2), 100)},
                         ref);
  const auto rep = identifiability_check(sys, VectorXd::Zero(4));
  CHECK_FALSE(rep.full_rank);
  REQUIRE(rep.uncovered_columns.size() == 1);
  CHECK(rep.uncovered_columns[0] == 3);
  try {
    fit_gmeta(sys, Variant::gmeta0);
    FAIL("expected IdentifiabilityError");
  } catch (const IdentifiabilityError& e) {
    CHECK(std::string(e.what()).find("c3") != std::string::npos);
  }
}

TEST_CASE("identifiability_check: simulation design is full rank; rank matches pivoted elimination") {
  std::mt19937_64 rng(13);
  Toy t = random_toy(rng);
  const MomentSystem sys(t.studies, t.ref);
  const auto rep = identifiability_check(sys, VectorXd::Zero(4));
  CHECK(rep.full_rank);
  CHECK(rep.uncovered_columns.empty());

  for (int i = 0; i < 50; ++i) {
    const Index r = 1 + i % 4;
    const MatrixXd a = oracle::random_matrix(rng, 7, r) * oracle::random_matrix(rng, r, 5);
    CHECK(numerical_rank(a, 1e-10) == oracle::pivoted_rank(a, 1e-10));
  }
}

TEST_CASE("asymptotic_covariance: sandwich form against an explicit matrix product") {
  std::mt19937_64 rng(14);
  Toy t = random_toy(rng, 60);
  const MomentSystem sys(t.studies, t.ref);
  GmetaFit fit;
  fit.beta_hat = oracle::random_matrix(rng, 4, 1, 0.3).col(0);
  fit.weighting = {oracle::random_spd(rng, 9), WeightingProvenance::user};
  const double n = 60.0;
  for (LambdaSource src : {LambdaSource::reference, LambdaSource::study}) {
    const MatrixXd g = jacobian_beta(fit.beta_hat, sys);
    const MatrixXd mid = delta_hat(fit.beta_hat, sys) + lambda_hat(fit.beta_hat, sys, src);
    const MatrixXd& c = fit.weighting.matrix;
    const MatrixXd bread = oracle::gauss_jordan_inverse(g.transpose() * c * g);
    const MatrixXd want = bread * g.transpose() * c * mid * c * g * bread / n;
    const MatrixXd got = asymptotic_covariance(fit, sys, src);
    CHECK(oracle::max_rel_diff(got, want, 1e-6) < 1e-12);
    CHECK(is_symmetric_psd(got, 1e-10));

    // With the optimal C both forms coincide.
    GmetaFit opt = fit;
    opt.weighting = {oracle::gauss_jordan_inverse(mid),
                     src == LambdaSource::reference ? WeightingProvenance::optimal_ref : WeightingProvenance::optimal_study};
    const MatrixXd efficient = oracle::gauss_jordan_inverse(g.transpose() * oracle::gauss_jordan_inverse(mid / n) * g);
    CHECK(oracle::max_rel_diff(asymptotic_covariance(opt, sys, src), efficient, 1e-6) < 1e-9);
    GmetaFit user = opt;
    user.weighting.provenance = WeightingProvenance::user;
    CHECK(oracle::max_rel_diff(asymptotic_covariance(user, sys, src), efficient, 1e-6) < 1e-8);
  }
}

TEST_CASE("weighting and config validation") {
  MatrixXd bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS((WeightingMatrix{bad, WeightingProvenance::user}.validate()), DimensionError);
  WeightingMatrix::identity(3).validate();
  GmetaConfig c;
  c.inner_tolerance = 0.0;
  CHECK_THROWS(c.validate());
  c = GmetaConfig{};
  c.outer_max_iterations = 0;
  CHECK_THROWS(c.validate());
  CHECK(variant_from_string("gmeta1") == Variant::gmeta1);
  CHECK_THROWS_AS(variant_from_string("gmeta7"), ParseError);
  for (HessianMode m : {HessianMode::full_newton, HessianMode::gauss_newton}) {
    CHECK(hessian_mode_from_string(to_string(m)) == m);
  }
}

TEST_CASE("dispersion: refuses bernoulli; derivative matches finite differences") {
  std::mt19937_64 rng(15);
  Toy t = random_toy(rng);
  const MomentSystem sys(t.studies, t.ref);
  CHECK_THROWS_AS(dispersion_step(1.0, sys, MatrixXd(), VectorXd::Zero(4)), DispersionError);

  const MatrixXd x = oracle::random_design(rng, 40, 3);
  auto s1 = study(FamilySpec::gaussian_identity(), {0, 1}, oracle::random_matrix(rng, 2, 1).col(0), 500);
  auto s2 = study(FamilySpec::gaussian_identity(), {0, 2}, oracle::random_matrix(rng, 2, 1).col(0), 800);
  s1.dispersion = 1.4;
  s2.dispersion = 1.1;
  const MomentSystem gsys({s1, s2}, reference_of(x));
  const VectorXd beta = oracle::random_matrix(rng, 3, 1, 0.5).col(0);
  for (double phi : {0.5, 1.0, 2.0}) {
    const auto m = dispersion_moments(phi, gsys, beta);
    const double h = 1e-6;
    const VectorXd fd = (dispersion_moments(phi + h, gsys, beta).u - dispersion_moments(phi - h, gsys, beta).u) / (2 * h);
    CHECK(oracle::max_rel_diff(m.dq, fd, 1e-8) < 1e-6);
    CHECK(m.d2q.cwiseAbs().maxCoeff() == 0.0);
    // u_k(phi) = mean[((mu - psi_k)^2 + phi - phi_k) / (2 phi_k^2)].
    VectorXd want = VectorXd::Zero(2);
    const StudySummary* ss[] = {&s1, &s2};
    for (int k = 0; k < 2; ++k) {
      for (Index i = 0; i < 40; ++i) {
        double psi = 0.0;
        for (std::size_t j = 0; j < ss[k]->map.maximal_columns.size(); ++j) {
          psi += x(i, ss[k]->map.maximal_columns[j]) * ss[k]->theta_hat(static_cast<Index>(j));
        }
        const double mu = x.row(i).dot(beta);
        const double pk = *ss[k]->dispersion;
        want(k) += ((mu - psi) * (mu - psi) + phi - pk) / (2.0 * pk * pk) / 40.0;
      }
    }
    CHECK(oracle::max_abs_diff(m.u, want) < 1e-12);
  }
}

TEST_CASE("dispersion: recovers the residual variance of large gaussian studies") {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd beta(4);
  beta << 0.5, 1.0, -0.5, 0.8;
  const auto draw = [&](Index n) {
    MatrixXd x = oracle::random_design(rng, n, 4);
    x.col(3) = 0.6 * x.col(1) + 0.8 * x.col(3);
    return x;
  };
  const std::vector<std::vector<Index>> maps{{0, 1, 2}, {0, 1, 3}};
  std::vector<StudySummary> studies;
  MatrixXd pooled_x(0, 4);
  VectorXd pooled_y(0);
  for (const auto& cols : maps) {
    const MatrixXd x = draw(20000);
    VectorXd y = x * beta;
    for (Index i = 0; i < y.size(); ++i) y(i) += nd(rng);
    MatrixXd xa(x.rows(), 3);
    for (Index j = 0; j < 3; ++j) xa.col(j) = x.col(cols[j]);
    const GlmFit f = fit_mle(xa, y, FamilySpec::gaussian_identity());
    auto s = study(FamilySpec::gaussian_identity(), cols, f.coefficients, 20000, f.sandwich_covariance);
    s.dispersion = *f.dispersion_estimate;
    studies.push_back(s);
    MatrixXd px(pooled_x.rows() + x.rows(), 4);
    px << pooled_x, x;
    pooled_x = px;
    VectorXd py(pooled_y.size() + y.size());
    py << pooled_y, y;
    pooled_y = py;
  }
  const MomentSystem sys(studies, reference_of(draw(2000)));
  const GmetaFit fit = fit_gmeta(sys, Variant::gmeta0);
  const DispersionFit d = fit_dispersion(sys, fit.beta_hat, 1.5, MatrixXd());
  const GlmFit pooled = fit_mle(pooled_x, pooled_y, FamilySpec::gaussian_identity());
  CHECK(std::abs(d.phi - 1.0) < 0.05);
  CHECK(std::abs(d.phi - *pooled.dispersion_estimate) < 0.05);
  CHECK(std::abs(d.gradient) < 1e-10);
}
