#include "gmeta/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "gmeta/errors.hpp"
#include "gmeta/linalg.hpp"

namespace gmeta {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> to_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string full(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Reference sample

ReferenceSample read_reference(std::istream& is, const std::string& source) {
  std::string line;
  if (!std::getline(is, line) || trim(line).empty()) throw ParseError(source + ": empty reference file");
  std::vector<std::string> header = split(line, ',');
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw ParseError(source + ": column " + std::to_string(j + 1) + " has no name");
    if (std::count(header.begin(), header.end(), header[j]) > 1) {
      throw ParseError(source + ": duplicate column '" + header[j] + "'");
    }
  }

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw ParseError(source + ": row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto v = to_double(cells[j]);
      if (!v) {
        throw ParseError(source + ": non-numeric value '" + cells[j] + "' at row " + std::to_string(lineno) +
                         ", column '" + header[j] + "'");
      }
      row[j] = *v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(source + ": reference file has no data rows");

  const bool has_intercept = std::find(header.begin(), header.end(), kInterceptColumn) != header.end();
  const Index p = static_cast<Index>(header.size()) + (has_intercept ? 0 : 1);
  ReferenceSample ref;
  ref.design.resize(static_cast<Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) ref.design(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  if (!has_intercept) {
    ref.design.col(p - 1).setOnes();
    header.emplace_back(kInterceptColumn);
  }
  ref.column_names = std::move(header);
  return ref;
}

ReferenceSample load_reference(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_reference(in, path.string());
}

void write_reference(std::ostream& os, const ReferenceSample& reference) {
  reference.validate();
  for (std::size_t j = 0; j < reference.column_names.size(); ++j) {
    os << (j ? "," : "") << reference.column_names[j];
  }
  os << "\n";
  for (Index i = 0; i < reference.rows(); ++i) {
    for (Index j = 0; j < reference.cols(); ++j) os << (j ? "," : "") << full(reference.design(i, j));
    os << "\n";
  }
}

void write_reference(const std::filesystem::path& path, const ReferenceSample& reference) {
  auto out = open_out(path);
  write_reference(out, reference);
}

// ---------------------------------------------------------------------------
// Study summaries

namespace {

struct RawStudy {
  int line = 0;
  std::vector<std::pair<std::string, std::string>> entries;

  const std::string* get(const std::string& key) const {
    for (const auto& [k, v] : entries) {
      if (k == key) return &v;
    }
    return nullptr;
  }
};

std::vector<double> parse_numbers(const std::string& value, const std::string& where) {
  std::vector<double> out;
  if (trim(value).empty()) return out;
  for (const auto& cell : split(value, ',')) {
    const auto v = to_double(cell);
    if (!v) throw ParseError(where + ": non-numeric value '" + cell + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<Index> resolve_columns(const std::string& value, const ReferenceSample& reference,
                                   const std::string& where) {
  std::vector<Index> out;
  if (trim(value).empty()) return out;
  for (const auto& name : split(value, ',')) {
    const auto col = reference.find_column(name);
    if (!col) throw ParseError(where + ": covariate '" + name + "' is not a reference column");
    out.push_back(*col);
  }
  return out;
}

StudySummary build_study(const RawStudy& raw, const ReferenceSample& reference, std::size_t index,
                         const std::string& source, std::vector<std::string>* warnings) {
  const std::string* id = raw.get("id");
  const std::string label = id ? *id : "#" + std::to_string(index + 1);
  const std::string where = source + ": study '" + label + "'";
  const auto require = [&](const char* key) -> const std::string& {
    const std::string* v = raw.get(key);
    if (!v) throw ParseError(where + " is missing '" + key + "'");
    return *v;
  };

  StudySummary s;
  s.map.study_id = label;
  try {
    s.family = FamilySpec::from_name(require("family"));
  } catch (const UnsupportedFamilyError& e) {
    throw ParseError(where + ": " + e.what());
  }
  const auto n = to_double(require("n"));
  if (!n || *n < 1.0) throw ParseError(where + ": n must be a number >= 1");
  s.n = *n;

  s.map.maximal_columns = resolve_columns(require("covariates"), reference, where);
  if (const auto* ex = raw.get("exclude")) s.map.excluded_columns = resolve_columns(*ex, reference, where);
  const auto theta = parse_numbers(require("theta"), where);
  const std::size_t dk = s.map.maximal_columns.size();
  if (theta.size() != dk) {
    throw ParseError(where + ": theta has " + std::to_string(theta.size()) + " entries for " + std::to_string(dk) +
                     " covariates");
  }
  s.theta_hat = Eigen::Map<const VectorXd>(theta.data(), static_cast<Index>(dk));

  if (const auto* cov = raw.get("covariance")) {
    const auto v = parse_numbers(*cov, where);
    if (v.size() != dk * dk) {
      throw ParseError(where + ": covariance has " + std::to_string(v.size()) + " entries, expected " +
                       std::to_string(dk * dk));
    }
    const MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data(), static_cast<Index>(dk), static_cast<Index>(dk));
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
      throw ParseError(where + ": covariance is not symmetric");
    }
    const double lo = min_eigenvalue(symmetrized(m));
    if (lo < -1e-8 * std::abs(m.trace())) {
      throw ParseError(where + ": covariance is not positive semi-definite (min eigenvalue " + full(lo) + ")");
    }
    s.covariance = m;
  } else if (warnings) {
    warnings->push_back(where + " has no covariance; study-based Lambda falls back to the reference sample");
  }

  if (const auto* disp = raw.get("dispersion")) {
    const auto v = to_double(*disp);
    if (!v || *v <= 0.0) throw ParseError(where + ": dispersion must be a positive number");
    s.dispersion = *v;
  }
  try {
    validate_study(s, reference.cols());
  } catch (const DimensionError& e) {
    throw ParseError(where + ": " + e.what());
  }
  return s;
}

}  // namespace

std::vector<StudySummary> read_summaries(std::istream& is, const ReferenceSample& reference,
                                         std::vector<std::string>* warnings, const std::string& source) {
  static const std::vector<std::string> kKeys{"id", "family", "n", "covariates", "exclude", "theta",
                                              "covariance", "dispersion"};
  std::vector<RawStudy> raw;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "[study]") {
      raw.push_back({lineno, {}});
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(source + ": line " + std::to_string(lineno) + " is not key = value");
    if (raw.empty()) throw ParseError(source + ": line " + std::to_string(lineno) + " precedes the first [study]");
    const std::string key = trim(t.substr(0, eq));
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw ParseError(source + ": unknown key '" + key + "' at line " + std::to_string(lineno));
    }
    if (raw.back().get(key)) throw ParseError(source + ": duplicate key '" + key + "' at line " + std::to_string(lineno));
    raw.back().entries.emplace_back(key, trim(t.substr(eq + 1)));
  }
  if (raw.empty()) throw ParseError(source + ": no [study] sections");

  std::vector<StudySummary> out;
  for (std::size_t k = 0; k < raw.size(); ++k) out.push_back(build_study(raw[k], reference, k, source, warnings));
  return out;
}

std::vector<StudySummary> load_summaries(const std::filesystem::path& path, const ReferenceSample& reference,
                                         std::vector<std::string>* warnings) {
  auto in = open_in(path);
  return read_summaries(in, reference, warnings, path.string());
}

void write_summaries(std::ostream& os, const std::vector<StudySummary>& studies, const ReferenceSample& reference) {
  const auto names = [&](const std::vector<Index>& cols) {
    std::string s;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      s += (j ? ", " : "") + reference.column_names.at(static_cast<std::size_t>(cols[j]));
    }
    return s;
  };
  for (std::size_t k = 0; k < studies.size(); ++k) {
    const auto& s = studies[k];
    if (k) os << "\n";
    os << "[study]\n";
    os << "id = " << (s.map.study_id.empty() ? "study" + std::to_string(k + 1) : s.map.study_id) << "\n";
    os << "family = " << s.family.name() << "\n";
    os << "n = " << full(s.n) << "\n";
    os << "covariates = " << names(s.map.maximal_columns) << "\n";
    if (!s.map.excluded_columns.empty()) os << "exclude = " << names(s.map.excluded_columns) << "\n";
    os << "theta = ";
    for (Index j = 0; j < s.theta_hat.size(); ++j) os << (j ? ", " : "") << full(s.theta_hat(j));
    os << "\n";
    if (s.covariance) {
      os << "covariance = ";
      for (Index i = 0; i < s.covariance->rows(); ++i) {
        for (Index j = 0; j < s.covariance->cols(); ++j) os << (i || j ? ", " : "") << full((*s.covariance)(i, j));
      }
      os << "\n";
    }
    if (s.dispersion) os << "dispersion = " << full(*s.dispersion) << "\n";
  }
}

void write_summaries(const std::filesystem::path& path, const std::vector<StudySummary>& studies,
                     const ReferenceSample& reference) {
  auto out = open_out(path);
  write_summaries(out, studies, reference);
}

// ---------------------------------------------------------------------------
// JSON configuration

namespace {

json config_to_json(const GmetaConfig& c) {
  return {{"inner_tolerance", c.inner_tolerance},
          {"inner_max_iterations", c.inner_max_iterations},
          {"outer_tolerance", c.outer_tolerance},
          {"outer_max_iterations", c.outer_max_iterations},
          {"ridge_epsilon", c.ridge_epsilon},
          {"hessian_mode", std::string(to_string(c.hessian_mode))},
          {"max_halvings", c.max_halvings}};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw ParseError(what + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ParseError(what + ": unknown key '" + key + "'");
    }
  }
}

GmetaConfig config_from_json(const json& j) {
  check_keys(j,
             {"inner_tolerance", "inner_max_iterations", "outer_tolerance", "outer_max_iterations", "ridge_epsilon",
              "hessian_mode", "max_halvings"},
             "tolerances");
  GmetaConfig c;
  c.inner_tolerance = j.value("inner_tolerance", c.inner_tolerance);
  c.inner_max_iterations = j.value("inner_max_iterations", c.inner_max_iterations);
  c.outer_tolerance = j.value("outer_tolerance", c.outer_tolerance);
  c.outer_max_iterations = j.value("outer_max_iterations", c.outer_max_iterations);
  c.ridge_epsilon = j.value("ridge_epsilon", c.ridge_epsilon);
  c.max_halvings = j.value("max_halvings", c.max_halvings);
  if (j.contains("hessian_mode")) c.hessian_mode = hessian_mode_from_string(j.at("hessian_mode").get<std::string>());
  c.validate();
  return c;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

json correlation_to_json(const Correlation& c) { return json::array({c.r12, c.r13, c.r23}); }

Correlation correlation_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ParseError("a correlation needs three entries (r12, r13, r23)");
  return {v[0], v[1], v[2]};
}

}  // namespace

void RunConfig::validate() const {
  gmeta.validate();
  if (maximal_dispersion && !(*maximal_dispersion > 0.0)) throw ParseError("maximal_dispersion must be positive");
}

bool RunConfig::operator==(const RunConfig& o) const {
  return variant == o.variant && gmeta == o.gmeta && out_path == o.out_path && seed == o.seed &&
         maximal_dispersion == o.maximal_dispersion;
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_json(json_text, "run config");
  check_keys(j, {"variant", "tolerances", "out", "seed", "maximal_dispersion"}, "run config");
  RunConfig c;
  try {
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("tolerances")) c.gmeta = config_from_json(j.at("tolerances"));
    if (j.contains("out")) c.out_path = j.at("out").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("maximal_dispersion")) c.maximal_dispersion = j.at("maximal_dispersion").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json j{{"variant", std::string(to_string(c.variant))}, {"tolerances", config_to_json(c.gmeta)}, {"seed", c.seed}};
  if (c.out_path) j["out"] = *c.out_path;
  if (c.maximal_dispersion) j["maximal_dispersion"] = *c.maximal_dispersion;
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text_file(path)); }

SimScenario parse_scenario(const std::string& json_text) {
  const json j = parse_json(json_text, "scenario");
  check_keys(j,
             {"name", "beta_true", "study_correlations", "reference_correlation", "study_sizes", "reference_size",
              "study_covariates", "meta_covariates", "report_study_fits", "variants", "replications", "seed",
              "intercept_mode", "tolerances"},
             "scenario");
  SimScenario s = preset_scenarios("table1").front();
  s.name = "custom";
  try {
    if (j.contains("name")) s.name = j.at("name").get<std::string>();
    if (j.contains("beta_true")) {
      const auto b = j.at("beta_true").get<std::vector<double>>();
      s.beta_true = Eigen::Map<const VectorXd>(b.data(), static_cast<Index>(b.size()));
    }
    if (j.contains("study_correlations")) {
      s.study_correlations.clear();
      for (const auto& c : j.at("study_correlations")) s.study_correlations.push_back(correlation_from_json(c));
    }
    if (j.contains("reference_correlation")) s.reference_correlation = correlation_from_json(j.at("reference_correlation"));
    if (j.contains("study_sizes")) s.study_sizes = j.at("study_sizes").get<std::vector<int>>();
    if (j.contains("reference_size")) s.reference_size = j.at("reference_size").get<int>();
    if (j.contains("study_covariates")) s.study_covariates = j.at("study_covariates").get<std::vector<std::vector<int>>>();
    if (j.contains("meta_covariates")) s.meta_covariates = j.at("meta_covariates").get<std::vector<int>>();
    if (j.contains("report_study_fits")) s.report_study_fits = j.at("report_study_fits").get<bool>();
    if (j.contains("variants")) {
      s.variants.clear();
      for (const auto& v : j.at("variants")) s.variants.push_back(variant_from_string(v.get<std::string>()));
    }
    if (j.contains("replications")) s.replications = j.at("replications").get<int>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("intercept_mode")) {
      const auto m = j.at("intercept_mode").get<std::string>();
      if (m == "shared") {
        s.intercept_mode = InterceptMode::shared;
      } else if (m == "study_specific") {
        s.intercept_mode = InterceptMode::study_specific;
      } else {
        throw ParseError("scenario: intercept_mode must be 'shared' or 'study_specific'");
      }
    }
    if (j.contains("tolerances")) s.gmeta_config = config_from_json(j.at("tolerances"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  try {
    s.validate();
  } catch (const DimensionError& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  return s;
}

std::string scenario_to_json(const SimScenario& s) {
  json corr = json::array();
  for (const auto& c : s.study_correlations) corr.push_back(correlation_to_json(c));
  json variants = json::array();
  for (Variant v : s.variants) variants.push_back(std::string(to_string(v)));
  const json j{{"name", s.name},
               {"beta_true", std::vector<double>(s.beta_true.data(), s.beta_true.data() + s.beta_true.size())},
               {"study_correlations", corr},
               {"reference_correlation", correlation_to_json(s.reference_correlation)},
               {"study_sizes", s.study_sizes},
               {"reference_size", s.reference_size},
               {"study_covariates", s.study_covariates},
               {"meta_covariates", s.meta_covariates},
               {"report_study_fits", s.report_study_fits},
               {"variants", variants},
               {"replications", s.replications},
               {"seed", s.seed},
               {"intercept_mode", s.intercept_mode == InterceptMode::shared ? "shared" : "study_specific"},
               {"tolerances", config_to_json(s.gmeta_config)}};
  return j.dump(2) + "\n";
}

SimScenario load_scenario(const std::filesystem::path& path) { return parse_scenario(read_text_file(path)); }

}  // namespace gmeta
