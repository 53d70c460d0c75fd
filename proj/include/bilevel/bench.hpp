#pragma once

#include "bilevel/accel_solvers.hpp"
#include "bilevel/oracle.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bilevel::bench {

enum ExitCode : int {
  kSuccess = 0,
  kConfigError = 1,
  kNumericFailure = 2,
  kVerificationFailure = 3,
};

/// Command-line values that take precedence over the config document.
struct Overrides {
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau_cost;
  int jobs = 1;
};

/// Instance, solver and derived parameters with every "auto" value filled in.
struct ResolvedRun {
  nlohmann::json config;
  nlohmann::json instance_json;
  OraclePtr oracle;
  /// Oracle used for reporting the unregularized problem, when a wrapper is applied.
  OraclePtr base_oracle;
  std::string algorithm;
  int K = 0;
  int N = 0;
  int M = 0;
  double eps = 0.0;
  double L_phi = 0.0;
  double mu_x = 0.0;
  double tau_cost = 2.0;
  double stepsize = 0.0;
  double alpha = 0.0;
  double U = 0.0;
  bool warm_start = true;
  int spot_checks = 0;
  std::uint64_t seed = 0;

  nlohmann::json resolved_json() const;
};

struct RunOutcome {
  int exit_code = kSuccess;
  RunTrace trace;
  nlohmann::json summary;
  std::string message;
};

/// Parses a config file; throws ConfigError with the line or field at fault.
nlohmann::json load_config(const std::filesystem::path& path);

/// Resolves a run config (a document with "instance" and "solver").
ResolvedRun resolve_run(const nlohmann::json& config, const Overrides& overrides);

/// Runs a resolved config and returns the trace and summary without writing files.
RunOutcome execute(const ResolvedRun& run);

/// Output directory: --out, then BILEVEL_BENCH_OUT, then the config's "out", then "bench_out".
std::filesystem::path output_dir(const nlohmann::json& config, const Overrides& overrides);

/// Writes `content` to `path` through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);

int run_experiment(const nlohmann::json& config, const Overrides& overrides);
int sweep(const nlohmann::json& config, const Overrides& overrides);
int verify_lower_bounds(const nlohmann::json& config, const Overrides& overrides);
/// Prints a plain-text summary of the artifacts found in `dir`.
int report(const std::filesystem::path& dir, std::ostream& out);

/// Least-squares slope of ys against xs.
double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys);

/// Runs every battery item and returns the campaign document.
nlohmann::json lower_bound_campaign(const nlohmann::json& config);

}  // namespace bilevel::bench
