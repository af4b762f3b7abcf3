#pragma once

#include "contagion/types.hpp"

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace contagion {

/// Which stocks are in distress. Stock i (0-based) is distressed when bit i
/// is set. Text form lists z_1 ... z_N left to right, e.g. "01" means stock 2
/// is distressed.
class DistressState {
 public:
  DistressState() = default;
  DistressState(int n_stocks, std::uint32_t bits);

  static DistressState none(int n_stocks) { return {n_stocks, 0u}; }
  static DistressState all(int n_stocks);
  static DistressState parse(const std::string& text);

  int size() const { return n_; }
  std::uint32_t bits() const { return bits_; }
  bool distressed(int i) const {
    if (i < 0 || i >= n_) out_of_range(i);
    return (bits_ >> i) & 1u;
  }
  bool alive(int i) const { return !distressed(i); }
  int count() const;
  bool all_distressed() const { return count() == n_; }
  std::string str() const;

  auto operator<=>(const DistressState&) const = default;

 private:
  [[noreturn]] static void out_of_range(int i);

  int n_ = 0;
  std::uint32_t bits_ = 0;
};

/// Returns z with stock i switched to distressed; z_i must be 0.
DistressState flip(DistressState z, int i);

/// Point of the closed (K-1)-simplex: the filter probabilities of the
/// first K-1 regimes. The last regime carries 1 - sum(coords).
struct SimplexPoint {
  RegimeVector coords;

  SimplexPoint() = default;
  explicit SimplexPoint(RegimeVector c) : coords(std::move(c)) {}
  /// K = 2 shorthand.
  static SimplexPoint scalar(double lambda1);
  static SimplexPoint from_full(const RegimeVector& p);

  int dim() const { return static_cast<int>(coords.size()); }
  RegimeVector full() const;
  bool in_closure(double tol = 1e-12) const;
  bool in_interior() const;

  bool operator==(const SimplexPoint& other) const;
};

/// Model primitives. Tables are stored for every one of the 2^N distress
/// states; coefficients are time-homogeneous, but every coefficient function
/// keeps a time argument.
class MarketConfig {
 public:
  MarketConfig() = default;
  MarketConfig(int n_stocks, int n_regimes);

  int n_stocks() const { return n_stocks_; }
  int n_regimes() const { return n_regimes_; }
  int n_states() const { return 1 << n_stocks_; }

  double rate = 0.0;
  double gamma = 0.5;
  double horizon = 1.0;
  double initial_wealth = 1.0;
  /// K x K transition-rate matrix: nonnegative off-diagonal, rows sum to 0.
  Eigen::MatrixXd generator;
  /// First K-1 filter probabilities at time 0.
  SimplexPoint initial_filter;

  double drift(int i, int k, DistressState z) const;
  double intensity(int i, int k, DistressState z) const;
  double volatility(int i, DistressState z) const;

  void set_drift(int i, int k, DistressState z, double v);
  void set_intensity(int i, int k, DistressState z, double v);
  void set_volatility(int i, DistressState z, double v);
  /// Same value in every distress state.
  void set_drift(int i, int k, double v);
  void set_intensity(int i, int k, double v);
  void set_volatility(int i, double v);

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  bool operator==(const MarketConfig& other) const;

 private:
  std::size_t regime_index(int i, int k, DistressState z) const;
  std::size_t stock_index(int i, DistressState z) const;

  int n_stocks_ = 0;
  int n_regimes_ = 0;
  std::vector<double> drift_;
  std::vector<double> intensity_;
  std::vector<double> volatility_;
};

/// Two-regime generator from the physical jump rates 1->2 and 2->1.
Eigen::MatrixXd two_regime_generator(double rate_1_to_2, double rate_2_to_1);

/// Two stocks, two regimes, the benchmark parameter set of the numerical study.
MarketConfig benchmark_config();

// ---------------------------------------------------------------------------
// Coefficient functions. Indices are 0-based.

/// mu_i(e_k, z) = b + h - vartheta^2 / 2.
double log_drift(const MarketConfig& cfg, int i, int k, DistressState z);

/// g(e_K) + sum_k (g(e_k) - g(e_K)) lambda_k.
template <typename Derived>
typename Derived::Scalar tilde_interp(const Eigen::MatrixBase<Derived>& values,
                                      const SimplexPoint& lambda) {
  const Eigen::Index n = values.size();
  if (n != lambda.coords.size() + 1) {
    throw std::invalid_argument("tilde_interp: expected K values for a (K-1)-dimensional point");
  }
  using Scalar = typename Derived::Scalar;
  // Weighted by the full probability vector so that vertices are reproduced exactly.
  Scalar acc = values(n - 1) * Scalar(1.0 - lambda.coords.sum());
  for (Eigen::Index k = 0; k + 1 < n; ++k) acc += values(k) * Scalar(lambda.coords(k));
  return acc;
}

/// Per-regime values h_i(e_k, z) and their filter-weighted average.
RegimeVector intensity_by_regime(const MarketConfig& cfg, int i, DistressState z);
double tilde_intensity(const MarketConfig& cfg, double t, const SimplexPoint& lambda, int i,
                       DistressState z);
double tilde_drift(const MarketConfig& cfg, double t, const SimplexPoint& lambda, int i,
                   DistressState z);

/// (K-1) x N matrix diag(lambda) [mu_perp^T - 1 mu_tilde^T] Sigma^{-1}.
FilterDiffusion sigma_matrix(const MarketConfig& cfg, double t, const SimplexPoint& lambda,
                             DistressState z);
/// sigma with columns of distressed stocks zeroed.
FilterDiffusion masked_sigma(const MarketConfig& cfg, double t, const SimplexPoint& lambda,
                             DistressState z);

/// Gamma_i = r - b_tilde_i - h_tilde_i.
StockVector gamma_vec(const MarketConfig& cfg, double t, const SimplexPoint& lambda,
                      DistressState z);

/// Drift of the projected filter coming from the hidden chain.
RegimeVector beta_varpi(const MarketConfig& cfg, double t, const SimplexPoint& lambda);

struct ThetaRho {
  RegimeVector theta;
  double rho = 0.0;
};

/// Whether the first-order HJB coefficient carries the drift of the
/// compensated distress martingale in the filter dynamics.
enum class JumpDrift { compensated, omitted };

/// -sum over live i of h_tilde_i J_i = -sum diag(lambda) (h_i_perp - h_tilde_i).
RegimeVector jump_compensator(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z);

/// First-order coefficient and source term of the HJB equation in state z.
/// JumpDrift::omitted gives beta_varpi - gamma/(1-gamma) sigma_z Sigma^{-1} Gamma
/// alone; the default adds jump_compensator, which the filter SDE implies.
ThetaRho theta_rho(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z,
                   JumpDrift jump_drift = JumpDrift::compensated);

/// Bayesian revision of the filter when stock i enters distress.
SimplexPoint jump_revision(const MarketConfig& cfg, double t, const SimplexPoint& lambda, int i,
                           DistressState z);

/// diag(vartheta_1(z), ..., vartheta_N(z)).
StockVector volatilities(const MarketConfig& cfg, DistressState z);

/// Risk-sensitive running cost eta_tilde(t, lambda, z, pi).
double eta_tilde(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z,
                 const StockVector& pi);

/// Coefficients of every distress state, laid out for the simulation loops.
class CoefficientTable {
 public:
  struct State {
    Eigen::MatrixXd drift;      // N x K, b_i(e_k, z)
    Eigen::MatrixXd intensity;  // N x K, h_i(e_k, z)
    Eigen::MatrixXd log_drift;  // N x K, mu_i(e_k, z)
    Eigen::VectorXd volatility;
  };

  explicit CoefficientTable(const MarketConfig& cfg);

  const State& operator[](DistressState z) const { return states_[z.bits()]; }
  int n_stocks() const { return n_stocks_; }
  int n_regimes() const { return n_regimes_; }

 private:
  int n_stocks_ = 0;
  int n_regimes_ = 0;
  std::vector<State> states_;
};

}  // namespace contagion
