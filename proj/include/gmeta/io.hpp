#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gmeta/gmm.hpp"
#include "gmeta/moments.hpp"
#include "gmeta/simulation.hpp"

namespace gmeta {

inline constexpr const char* kInterceptColumn = "_intercept";

/// Comma-delimited reference covariates with a header row. A "_intercept"
/// column of ones is appended unless present. Throws ParseError naming the
/// offending row and column.
ReferenceSample read_reference(std::istream& is, const std::string& source = "<stream>");
ReferenceSample load_reference(const std::filesystem::path& path);
void write_reference(std::ostream& os, const ReferenceSample& reference);
void write_reference(const std::filesystem::path& path, const ReferenceSample& reference);

/// Sectioned key/value summaries:
///
///   [study]
///   id = s1
///   family = bernoulli_logit
///   n = 300
///   covariates = _intercept, x1, x2
///   theta = -0.01, 0.26, 0.31
///   covariance = ...            (row-major, optional)
///   dispersion = 1.0            (optional)
///   exclude = _intercept_s2     (optional)
///
/// Covariate names resolve against the reference header. Studies without a
/// covariance produce a warning (appended to `warnings` when given).
std::vector<StudySummary> read_summaries(std::istream& is, const ReferenceSample& reference,
                                         std::vector<std::string>* warnings = nullptr,
                                         const std::string& source = "<stream>");
std::vector<StudySummary> load_summaries(const std::filesystem::path& path, const ReferenceSample& reference,
                                         std::vector<std::string>* warnings = nullptr);
void write_summaries(std::ostream& os, const std::vector<StudySummary>& studies,
                     const ReferenceSample& reference);
void write_summaries(const std::filesystem::path& path, const std::vector<StudySummary>& studies,
                     const ReferenceSample& reference);

/// Options for `gmeta fit`, read from a JSON file.
struct RunConfig {
  Variant variant = Variant::gmeta2;
  GmetaConfig gmeta;
  std::optional<std::string> out_path;
  std::uint64_t seed = 20170801;
  std::optional<double> maximal_dispersion;

  void validate() const;
  bool operator==(const RunConfig& other) const;
};

RunConfig parse_run_config(const std::string& json_text);
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

/// Scenario files for `gmeta simulate --scenario`. Unset fields take the
/// table1 preset's values.
SimScenario parse_scenario(const std::string& json_text);
std::string scenario_to_json(const SimScenario& scenario);
SimScenario load_scenario(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace gmeta
