#include "doctest.h"

#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

#include "gmeta/errors.hpp"
#include "gmeta/io.hpp"
#include "gmeta/linalg.hpp"
#include "oracles.hpp"

using namespace gmeta;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const char* kReferenceCsv =
    "x1,x2,x3\n"
    "0.5,1,-2\n"
    "1.5, 2 ,0\n"
    "-0.25,3,1e-3\n"
    "2,4,7\n"
    "0,5,-1\n";

ReferenceSample small_reference() {
  std::istringstream is(kReferenceCsv);
  return read_reference(is);
}

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("read_reference: appends an intercept column") {
  const ReferenceSample r = small_reference();
  CHECK(r.rows() == 5);
  CHECK(r.cols() == 4);
  CHECK(r.column_names == std::vector<std::string>{"x1", "x2", "x3", "_intercept"});
  CHECK(r.design(1, 1) == 2.0);
  CHECK(r.design(2, 2) == 1e-3);
  CHECK((r.design.col(3).array() == 1.0).all());
}

TEST_CASE("read_reference: errors name the row and column") {
  std::istringstream na("x1,x2\n1,2\n3,NA\n");
  const std::string msg = what_of([&] { read_reference(na, "ref.csv"); });
  CHECK(msg.find("ref.csv") != std::string::npos);
  CHECK(msg.find("row 3") != std::string::npos);
  CHECK(msg.find("'x2'") != std::string::npos);

  std::istringstream ragged("x1,x2\n1,2\n3\n");
  CHECK_THROWS_AS(read_reference(ragged), ParseError);
  std::istringstream dup("x1,x1\n1,2\n");
  CHECK_THROWS_AS(read_reference(dup), ParseError);
  std::istringstream empty("");
  CHECK_THROWS_AS(read_reference(empty), ParseError);
}

TEST_CASE("reference round trip keeps full precision") {
  std::mt19937_64 rng(4);
  ReferenceSample r;
  r.design = oracle::random_matrix(rng, 20, 3);
  r.design.col(0).setOnes();
  r.column_names = {"_intercept", "a", "b"};
  std::ostringstream os;
  write_reference(os, r);
  std::istringstream is(os.str());
  const ReferenceSample back = read_reference(is);
  CHECK(back.column_names == r.column_names);
  CHECK((back.design.array() == r.design.array()).all());
}

TEST_CASE("read_summaries: two studies resolve against the reference header") {
  const ReferenceSample r = small_reference();
  std::istringstream is(
      "# two studies\n"
      "[study]\n"
      "id = s1\n"
      "family = bernoulli_logit\n"
      "n = 300\n"
      "covariates = _intercept, x1, x2\n"
      "theta = -0.1, 0.2, 0.3\n"
      "covariance = 1,0,0, 0,2,0, 0,0,3\n"
      "\n"
      "[study]\n"
      "id = s2\n"
      "family = bernoulli_logit\n"
      "n = 500\n"
      "covariates = _intercept, x3\n"
      "theta = 0.05, -0.4\n");
  std::vector<std::string> warnings;
  const auto studies = read_summaries(is, r, &warnings);
  REQUIRE(studies.size() == 2);
  CHECK(studies[0].map.study_id == "s1");
  CHECK(studies[0].map.maximal_columns == std::vector<Index>{3, 0, 1});
  CHECK(studies[0].n == 300.0);
  CHECK(studies[0].theta_hat(2) == 0.3);
  REQUIRE(studies[0].covariance);
  CHECK((*studies[0].covariance)(2, 2) == 3.0);
  CHECK(studies[1].map.maximal_columns == std::vector<Index>{3, 2});
  CHECK_FALSE(studies[1].covariance);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("s2") != std::string::npos);
}

TEST_CASE("read_summaries: errors") {
  const ReferenceSample r = small_reference();
  const auto parse = [&](const std::string& text) {
    std::istringstream is(text);
    read_summaries(is, r);
  };
  const std::string head = "[study]\nid = s9\nfamily = bernoulli_logit\nn = 10\n";
  const std::string unknown = what_of([&] { parse(head + "covariates = _intercept, x7\ntheta = 0, 0\n"); });
  CHECK(unknown.find("s9") != std::string::npos);
  CHECK(unknown.find("x7") != std::string::npos);
  CHECK_THROWS_AS(parse(head + "covariates = x1\ntheta = 0, 0\n"), ParseError);
  CHECK_THROWS_AS(parse(head + "covariates = x1\ntheta = 0\ncolour = red\n"), ParseError);
  CHECK_THROWS_AS(parse(head + "n = 11\ncovariates = x1\ntheta = 0\n"), ParseError);
  CHECK_THROWS_AS(parse(head + "covariates = x1, x2\ntheta = 0, 0\ncovariance = 1, 0.5, 0.4, 1\n"), ParseError);
  CHECK_THROWS_AS(parse("[study]\nid = s\nfamily = poisson\nn = 10\ncovariates = x1\ntheta = 0\n"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
}

TEST_CASE("read_summaries: PSD check agrees with an eigenvalue oracle") {
  const ReferenceSample r = small_reference();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 40; ++rep) {
    MatrixXd m = oracle::random_spd(rng, 3);
    const double shift = 0.5 * z(rng);
    m -= std::max(0.0, shift) * MatrixXd::Identity(3, 3) * m.trace();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
    const bool psd = es.eigenvalues().minCoeff() >= -1e-8 * std::abs(m.trace());
    std::ostringstream text;
    text << std::setprecision(17) << "[study]\nid = p\nfamily = bernoulli_logit\nn = 10\n"
         << "covariates = x1, x2, x3\ntheta = 0, 0, 0\ncovariance = ";
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) text << (i + j ? ", " : "") << m(i, j);
    text << "\n";
    std::istringstream is(text.str());
    if (psd) {
      CHECK_NOTHROW(read_summaries(is, r));
    } else {
      CHECK_THROWS_AS(read_summaries(is, r), ParseError);
    }
  }
}

TEST_CASE("summaries round trip") {
  const ReferenceSample r = small_reference();
  std::mt19937_64 rng(12);
  StudySummary a;
  a.map.study_id = "first";
  a.map.maximal_columns = {3, 0, 2};
  a.map.excluded_columns = {1};
  a.theta_hat = oracle::random_matrix(rng, 3, 1).col(0);
  a.covariance = oracle::random_spd(rng, 3);
  a.n = 1234;
  StudySummary b;
  b.map.study_id = "second";
  b.family = FamilySpec::gaussian_identity();
  b.dispersion = 2.5;
  b.map.maximal_columns = {3, 1};
  b.theta_hat = oracle::random_matrix(rng, 2, 1).col(0);
  b.n = 77;
  std::ostringstream os;
  write_summaries(os, {a, b}, r);
  std::istringstream is(os.str());
  const auto back = read_summaries(is, r);
  REQUIRE(back.size() == 2);
  CHECK(back[0].map.study_id == "first");
  CHECK(back[0].map.maximal_columns == a.map.maximal_columns);
  CHECK(back[0].map.excluded_columns == a.map.excluded_columns);
  CHECK((back[0].theta_hat.array() == a.theta_hat.array()).all());
  CHECK((back[0].covariance->array() == a.covariance->array()).all());
  CHECK(back[0].n == 1234.0);
  CHECK(back[1].family.kind() == FamilyKind::gaussian_identity);
  CHECK(back[1].dispersion == 2.5);
  CHECK_FALSE(back[1].covariance);
}

TEST_CASE("run config JSON") {
  RunConfig c;
  c.variant = Variant::gmeta1;
  c.gmeta.inner_tolerance = 1e-9;
  c.gmeta.outer_max_iterations = 7;
  c.gmeta.hessian_mode = HessianMode::full_newton;
  c.out_path = "fit.csv";
  c.seed = 99;
  c.maximal_dispersion = 1.75;
  CHECK(parse_run_config(run_config_to_json(c)) == c);
  CHECK(parse_run_config("{}") == RunConfig{});
  CHECK(parse_run_config(R"({"variant": "gmeta0"})").variant == Variant::gmeta0);
  CHECK_THROWS_AS(parse_run_config(R"({"variant": "gmeta7"})"), ParseError);
  CHECK_THROWS_AS(parse_run_config(R"({"verbose": true})"), ParseError);
  CHECK_THROWS_AS(parse_run_config(R"({"tolerances": {"inner_tolerance": -1}})"), ParseError);
  CHECK_THROWS_AS(parse_run_config("[1, 2"), ParseError);
}

TEST_CASE("scenario JSON") {
  for (const char* preset : {"table1", "table2", "table3", "equivalence"}) {
    for (const SimScenario& s : preset_scenarios(preset)) {
      const SimScenario back = parse_scenario(scenario_to_json(s));
      CHECK(back.name == s.name);
      CHECK((back.beta_true.array() == s.beta_true.array()).all());
      CHECK(back.study_correlations == s.study_correlations);
      CHECK(back.reference_correlation == s.reference_correlation);
      CHECK(back.study_sizes == s.study_sizes);
      CHECK(back.reference_size == s.reference_size);
      CHECK(back.study_covariates == s.study_covariates);
      CHECK(back.meta_covariates == s.meta_covariates);
      CHECK(back.report_study_fits == s.report_study_fits);
      CHECK(back.variants == s.variants);
      CHECK(back.replications == s.replications);
      CHECK(back.seed == s.seed);
      CHECK(back.intercept_mode == s.intercept_mode);
      CHECK(back.gmeta_config == s.gmeta_config);
    }
  }
  const SimScenario d = parse_scenario(R"({"replications": 3})");
  CHECK(d.name == "custom");
  CHECK(d.replications == 3);
  CHECK(d.study_sizes == preset_scenarios("table1").front().study_sizes);
  CHECK_THROWS_AS(parse_scenario(R"({"intercept_mode": "both"})"), ParseError);
  CHECK_THROWS_AS(parse_scenario(R"({"study_correlations": [[0.1, 0.2]]})"), ParseError);
}
