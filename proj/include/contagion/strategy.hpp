#pragma once

#include "contagion/filter.hpp"
#include "contagion/hjb.hpp"

#include <string>
#include <vector>

namespace contagion {

/// Optimal fractions of wealth for a given gradient of w (row vector of
/// length K - 1). Distressed coordinates are exactly 0.
StockVector feedback_from_gradient(const MarketConfig& cfg, const RegimeVector& grad_w, double t,
                                   const SimplexPoint& lambda, DistressState z);

struct PhiValues {
  double phi = 0.0;
  double phi_star = 0.0;
};

/// Phi(grad w; pi) and its maximum Phi* over pi.
PhiValues phi_and_phistar(const MarketConfig& cfg, const RegimeVector& grad_w, double t, const SimplexPoint& lambda,
                          DistressState z, const StockVector& pi);

/// Optimal feedback built from solved surfaces (K = 2). Gradients are
/// tabulated on the grid nodes (centered inside, second-order one-sided at
/// lambda = 0 and 1) and interpolated linearly in lambda and t.
class FeedbackStrategy {
 public:
  FeedbackStrategy(const MarketConfig& cfg, const SurfaceMap& surfaces);

  StockVector operator()(double t, const SimplexPoint& lambda, DistressState z) const;
  /// dw/dlambda_1 of state z at (t, lambda).
  double gradient(double t, double lambda, DistressState z) const;

  const MarketConfig& config() const { return cfg_; }
  const SurfaceMap& surfaces() const { return surfaces_; }

  /// Callable for the simulators, optionally scaling every position by c.
  FeedbackFunction function(double scale = 1.0) const;

 private:
  struct Table {
    Grid grid;
    double dt = 0.0;
    Eigen::MatrixXd grad;  // n_time x n_space
  };
  // pi_i = spread_i g lambda (1 - lambda) - level_i - slope_i lambda
  struct Rule {
    std::shared_ptr<const Table> table;
    Eigen::ArrayXd spread, level, slope;
  };
  const Rule& rule(DistressState z) const;
  double gradient(const Table& tab, double t, double lambda) const;

  MarketConfig cfg_;
  SurfaceMap surfaces_;
  std::vector<Rule> rules_;  // indexed by DistressState::bits()
};

/// (v^gamma / gamma) exp(w(0, lambda, z)).
double value_terminal_utility(const MarketConfig& cfg, const SurfaceMap& surfaces, double lambda, DistressState z);

/// Strategy table with columns t, lambda, state, pi_1..pi_N over the given
/// times, lambda values and states.
std::string strategy_csv(const FeedbackStrategy& strategy, const std::vector<double>& times,
                         const std::vector<double>& lambdas, const std::vector<DistressState>& states);

}  // namespace contagion
