#pragma once

#include "contagion/filter.hpp"
#include "contagion/strategy.hpp"

#include <string>
#include <vector>

namespace contagion {

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Sample mean and standard error, with pairwise summation.
Estimate summarize(const std::vector<double>& samples);

/// Runs f(path) for path = 0..n_paths-1 on the given number of threads
/// (0 = hardware concurrency). Each result lands at its own index, so the
/// output does not depend on scheduling.
std::vector<double> parallel_paths(int n_paths, int threads, const std::function<double(int)>& f);

/// Per-path (v^gamma / gamma) exp(-gamma int eta_tilde) under P-tilde.
std::vector<double> objective_samples_tildeP(const MarketConfig& cfg, const SimConfig& sim,
                                             const FeedbackFunction& strategy, const SimplexPoint& lambda0,
                                             DistressState z0, int threads = 0);

/// Objective of the risk-sensitive problem under P-tilde from (lambda0, z0).
Estimate estimate_objective_tildeP(const MarketConfig& cfg, const SimConfig& sim, const FeedbackFunction& strategy,
                                   const SimplexPoint& lambda0, DistressState z0, int threads = 0);

/// Per-path V_T^gamma / gamma from the full partially observed pipeline:
/// ground truth, the observation filter, the feedback rule evaluated on the
/// filter, and log-Euler wealth with the true coefficients. Throws
/// NumericalError if the wealth stops being finite and positive.
std::vector<double> utility_samples_physical(const MarketConfig& cfg, const SimConfig& sim,
                                             const FeedbackFunction& strategy, const SimplexPoint& lambda0,
                                             DistressState z0, int threads = 0);

/// Expected utility of terminal wealth under P from (lambda0, z0).
Estimate simulate_wealth_physical(const MarketConfig& cfg, const SimConfig& sim, const FeedbackFunction& strategy,
                                  const SimplexPoint& lambda0, DistressState z0, int threads = 0);

struct AuditEntry {
  std::string label;
  Estimate objective;
  /// Optimal minus perturbed objective, paired path by path.
  Estimate advantage;
  bool pass = false;
};

struct AuditReport {
  Estimate optimal;
  std::vector<AuditEntry> entries;
  bool pass = false;
};

/// Compares the optimal feedback with scaled copies c * pi* and with the
/// constant strategy pi*(0, lambda0, z0), all on common random numbers.
/// An entry passes when the advantage is at least -3 standard errors.
AuditReport suboptimality_audit(const MarketConfig& cfg, const SimConfig& sim, const FeedbackStrategy& strategy,
                                const SimplexPoint& lambda0, DistressState z0, const std::vector<double>& scales,
                                int threads = 0);

struct VerificationReport {
  double lambda0 = 0.0;
  DistressState z0;
  double pde_value = 0.0;
  Estimate mc_tildeP;
  Estimate mc_physical;
  int n_paths = 0;
  double dt = 0.0;
  /// Discretization allowance C dt.
  double allowance_rate = 0.0;
  double allowance = 0.0;
  bool pass_tildeP = false;
  bool pass_physical = false;
  bool pass_consistency = false;

  bool pass() const { return pass_tildeP && pass_physical && pass_consistency; }
  static std::string csv_header();
  std::string csv_row() const;
  std::string text() const;
};

/// Relative rounding slack of the pass tests, so exact cases pass.
inline constexpr double kRoundoff = 1e-12;

/// Both estimators at (lambda0, z0) against (v^gamma / gamma) exp(w(0, lambda0, z0)).
/// Each passes when |mc - pde| <= 3 stderr + C dt + kRoundoff |pde|;
/// consistency compares the two estimators with their combined standard error.
VerificationReport verify_value(const MarketConfig& cfg, const SimConfig& sim, const FeedbackStrategy& strategy,
                                double lambda0, DistressState z0, double allowance_rate, int threads = 0);

struct AllowanceCalibration {
  double pde_value = 0.0;
  std::vector<double> dt;
  std::vector<Estimate> estimates;
  /// Largest bias resolved beyond 3 standard errors, per unit dt.
  double rate = 0.0;
};

/// dt-refinement study of the P-tilde estimator against the PDE value. The
/// returned rate is max_j max(0, |mean_j - pde| - 3 se_j) / dt_j, the C of
/// the discretization allowance C dt.
AllowanceCalibration calibrate_allowance(const MarketConfig& cfg, const SimConfig& sim,
                                         const FeedbackStrategy& strategy, double lambda0, DistressState z0,
                                         const std::vector<double>& dts, int threads = 0);

}  // namespace contagion
