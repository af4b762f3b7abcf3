#pragma once

#include "contagion/verify.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace contagion {

struct VerifySettings {
  std::vector<double> lambdas{0.2, 0.5, 0.8};
  DistressState state = DistressState::none(2);
  /// C of the allowance C dt.
  double allowance_rate = 0.0;
  /// When non-empty, C is recalibrated on these steps before verifying.
  std::vector<double> calibration_dts;
  std::vector<double> audit_scales{0.0, 0.5, 0.8, 1.2, 2.0};
  double audit_lambda = 0.5;
};

struct SweepSettings {
  /// gamma, rate, horizon, drift.i.k, intensity.i.k or volatility.i (1-based).
  std::string parameter;
  std::vector<double> values;
  /// Number of evenly spaced lambda points of the strategy tables.
  int table_points = 101;
};

struct ExperimentConfig {
  MarketConfig market;
  Grid grid;
  SolveOptions solve;
  SimConfig sim;
  VerifySettings verify;
  std::optional<SweepSettings> sweep;
  std::string output = "out";

  /// Throws ConfigError naming the offending block.
  void validate() const;
};

/// Parses the JSON text. Syntax errors report line and column, schema errors
/// the dotted field path; both throw ConfigError prefixed with source.
ExperimentConfig parse_experiment(const std::string& text, const std::string& source = "config");
ExperimentConfig load_experiment(const std::string& path);
/// Canonical JSON; parse_experiment(to_json(c)) serializes back to the same text.
std::string to_json(const ExperimentConfig& config);

/// The benchmark market with default numerical settings.
ExperimentConfig benchmark_experiment();

/// Sets a sweepable parameter in every distress state. Throws ConfigError on
/// an unknown path or an index out of range.
void apply_parameter(MarketConfig& cfg, const std::string& path, double value);
double parameter_value(const MarketConfig& cfg, const std::string& path);

struct SweepResult {
  std::string parameter;
  std::vector<double> values;
  std::vector<double> lambdas;
  std::vector<DistressState> states;
  /// pi[v][s][m]: optimal fractions at t = 0 for value v, state s, lambda m.
  std::vector<std::vector<std::vector<StockVector>>> pi;
  /// Strategy tables in the strategy CSV layout, one per value.
  std::vector<std::string> tables;

  const StockVector& at(int value, DistressState z, int m) const;
};

/// Re-solves the market for every value and tabulates the strategy at t = 0.
SweepResult run_sweep(const MarketConfig& base, const Grid& grid, const SolveOptions& opts,
                      const SweepSettings& settings);

struct PropertyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Qualitative properties of two-stock sweeps: contagion (pi_2 in state 10
/// never above pi_2 in 00) for every sweep, plus the parameter-specific
/// monotonicity for intensity.1.1, gamma and volatility.2.
std::vector<PropertyCheck> sweep_properties(const SweepResult& sweep);

/// Exit status of the commands.
enum class Status { ok = 0, config_error = 1, numerical_failure = 2, verification_failure = 3 };

struct RunOptions {
  std::string output;   // overrides config.output when non-empty
  std::optional<std::uint64_t> seed;
  int threads = 0;
};

Status cmd_solve(const ExperimentConfig& config, const RunOptions& run, std::ostream& log);
Status cmd_sweep(const ExperimentConfig& config, const RunOptions& run, std::ostream& log);
Status cmd_verify(const ExperimentConfig& config, const RunOptions& run, std::ostream& log);
/// One ground-truth path with the SDE filter and the discrete Bayes filter.
Status cmd_filter_demo(const ExperimentConfig& config, const RunOptions& run, std::ostream& log);

}  // namespace contagion
