#pragma once

#include "contagion/model.hpp"
#include "contagion/rng.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace contagion {

/// Time discretization of the filter diffusion. The noise of the filter SDE
/// is commutative, so the Milstein correction needs only products of the
/// step increments.
enum class FilterScheme { euler, milstein };

/// Feedback trading rule: fractions of wealth in each stock.
using FeedbackFunction = std::function<StockVector(double t, const SimplexPoint& lambda, DistressState z)>;

struct SimConfig {
  double dt = 1e-3;
  double horizon = 1.0;
  std::uint64_t seed = 1;
  int n_paths = 1000;
  FilterScheme scheme = FilterScheme::milstein;

  int n_steps() const;
  /// Effective step, horizon / n_steps().
  double step() const { return horizon / n_steps(); }
  /// Throws ConfigError on invalid values. Returns a warning when the largest
  /// intensity times dt reaches 0.5, otherwise an empty string.
  std::string validate(const MarketConfig& cfg) const;
};

/// Ground truth of one simulated path on the time grid t_j = j dt.
struct MarketPath {
  std::vector<double> time;
  std::vector<int> regime;               // X(t_j), 0-based
  Eigen::MatrixXd brownian;              // n_steps x N increments
  Eigen::MatrixXd log_price;             // (n_steps + 1) x N, Y(0) = 0
  std::vector<DistressState> distress;   // H(t_j)
  std::vector<double> distress_time;     // tau_i, +inf when not reached
};

/// Filter probabilities (full K-vectors) along a path.
struct FilterPath {
  std::vector<double> time;
  Eigen::MatrixXd probs;                 // (n_steps + 1) x K
  std::vector<DistressState> distress;
};

/// One grid step of the ground truth.
struct TruthIncrement {
  int regime = 0;              // X(t_j)
  DistressState state;         // H(t_j)
  StockVector dW;
  StockVector dY;
  int distressed = -1;         // stock entering distress in (t_j, t_{j+1}], or -1
};

/// Exact simulation of the hidden chain and of the distress times, with
/// Euler log prices. The chain is sampled by exponential holding times, the
/// distress times by inverting the integrated hazard against unit
/// exponential thresholds. At most one stock enters distress per step; a
/// second crossing inside the same step is registered at the next step.
class TruthSimulator {
 public:
  TruthSimulator(const MarketConfig& cfg, const CoefficientTable& table, PathRng& rng,
                 const RegimeVector& prior, DistressState z0, double dt);

  void step(TruthIncrement& inc);

  double time() const { return t_; }
  int regime() const { return regime_; }
  DistressState state() const { return z_; }
  const std::vector<double>& distress_time() const { return tau_; }

 private:
  void draw_holding_time();

  const MarketConfig& cfg_;
  const CoefficientTable& table_;
  PathRng& rng_;
  double dt_;
  double t_ = 0.0;
  std::int64_t steps_ = 0;
  int regime_ = 0;
  double next_switch_ = std::numeric_limits<double>::infinity();
  DistressState z_;
  StockVector hazard_;
  StockVector threshold_;
  std::vector<double> tau_;
};

/// Adds the drift-free filter diffusion for the normalized increments
/// dI_i (unit-variance Brownian increments over dt) to next:
/// p_k sum_i (c_ik - c_hat_i) dI_i with c_ik = mu_i(e_k) / vartheta_i, plus
/// the Milstein term when requested.
void add_filter_diffusion(const RegimeVector& p, const CoefficientTable::State& st, const StockVector& dI,
                          double dt, FilterScheme scheme, RegimeVector& next);

/// Filter under the physical measure driven by observed log-price
/// increments and distress events, renormalized every step.
class ObservationFilter {
 public:
  ObservationFilter(const MarketConfig& cfg, const CoefficientTable& table, const RegimeVector& prior,
                    DistressState z0, FilterScheme scheme = FilterScheme::milstein);

  /// dY over the step, the stock entering distress in the step (or -1).
  void step(const StockVector& dY, int distressed, double dt);

  const RegimeVector& probabilities() const { return p_; }
  SimplexPoint point() const { return SimplexPoint::from_full(p_); }
  DistressState state() const { return z_; }

 private:
  const MarketConfig& cfg_;
  const CoefficientTable& table_;
  RegimeVector p_;
  DistressState z_;
  FilterScheme scheme_;
};

/// Discrete-time Bayes filter of the Euler-discretized model: prediction
/// with I + Q dt, Gaussian likelihood of the log-return increments,
/// Bernoulli likelihood of distress or survival.
class BayesFilter {
 public:
  BayesFilter(const MarketConfig& cfg, const CoefficientTable& table, const RegimeVector& prior,
              DistressState z0);

  void step(const StockVector& dY, int distressed, double dt);

  const RegimeVector& probabilities() const { return p_; }
  DistressState state() const { return z_; }

 private:
  const MarketConfig& cfg_;
  const CoefficientTable& table_;
  RegimeVector p_;
  DistressState z_;
};

/// Projected filter simulated directly under the control measure P-tilde,
/// with distress driven by the filtered intensity through the time change
/// of unit exponential thresholds. Draws exactly N normals per step, so two
/// strategies run on the same stream see common random numbers.
class ControlledFilter {
 public:
  ControlledFilter(const MarketConfig& cfg, const CoefficientTable& table, PathRng& rng,
                   const RegimeVector& p0, DistressState z0, FilterScheme scheme = FilterScheme::milstein);

  /// Advances by dt holding pi fixed, accumulating eta-tilde at the left end.
  void step(double t, const StockVector& pi, double dt);

  const RegimeVector& probabilities() const { return p_; }
  SimplexPoint point() const { return SimplexPoint::from_full(p_); }
  DistressState state() const { return z_; }
  double eta_integral() const { return eta_integral_; }
  /// Integral of the filtered intensity of stock i up to now.
  double hazard(int i) const { return hazard_(i); }

 private:
  const MarketConfig& cfg_;
  const CoefficientTable& table_;
  PathRng& rng_;
  RegimeVector p_;
  DistressState z_;
  StockVector hazard_;
  StockVector threshold_;
  double eta_integral_ = 0.0;
  FilterScheme scheme_;
};

/// Projects p back onto the simplex. Throws NumericalError when a
/// coordinate left [0, 1] by more than the tolerance.
void renormalize(RegimeVector& p, double tolerance = 1e-3);

MarketPath simulate_truth_path(const MarketConfig& cfg, const SimConfig& sim, std::uint64_t path_index);
std::vector<MarketPath> simulate_truth(const MarketConfig& cfg, const SimConfig& sim);

FilterPath run_filter(const MarketConfig& cfg, const MarketPath& path,
                      FilterScheme scheme = FilterScheme::milstein);
FilterPath hmm_oracle_filter(const MarketConfig& cfg, const MarketPath& path);

struct ControlledPath {
  FilterPath filter;
  double eta_integral = 0.0;
};

/// One P-tilde path from (lambda0, z0) under the feedback rule.
ControlledPath run_filter_tildeP_path(const MarketConfig& cfg, const SimConfig& sim,
                                      const FeedbackFunction& strategy, const SimplexPoint& lambda0,
                                      DistressState z0, std::uint64_t path_index);
std::vector<ControlledPath> run_filter_tildeP(const MarketConfig& cfg, const SimConfig& sim,
                                              const FeedbackFunction& strategy);

}  // namespace contagion
