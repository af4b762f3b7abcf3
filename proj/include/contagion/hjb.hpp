#pragma once

#include "contagion/model.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace contagion {

/// Uniform grid on [0, T] x [0, 1], endpoints included.
struct Grid {
  int n_space = 201;
  int n_time = 3000;

  void validate() const;
  double dlambda() const { return 1.0 / (n_space - 1); }
  double lambda(int m) const { return m * dlambda(); }
};

struct SolveOptions {
  enum class Mode { direct, stampacchia };
  enum class Boundary { degenerate, dirichlet_zero };

  Mode mode = Mode::direct;
  /// Truncation level m of q / (1 + q / m).
  double truncation = 1000.0;
  Boundary boundary = Boundary::degenerate;
  double newton_tol = 1e-10;
  int max_inner_iters = 50;
  /// Use the closed form for the all-distressed state instead of time stepping.
  bool analytic_terminal = true;
  JumpDrift jump_drift = JumpDrift::compensated;

  void validate() const;
};

std::string to_string(SolveOptions::Mode mode);
/// 1 / (1 + q / m): a quadratic term q truncated at level m is q * truncation_factor(q, m).
inline double truncation_factor(double q, double m) { return 1.0 / (1.0 + q / m); }
std::string to_string(SolveOptions::Boundary boundary);
std::string to_string(JumpDrift drift);

/// Envelopes of the approximating solutions in time-to-maturity tau:
/// L(tau) = (tau + 1) lower_rate, U(tau) = (tau + 1) upper_rate.
struct Bounds {
  double rho_inf = 0.0;       // L_xi
  double rho_sup = 0.0;
  double child_sup = 0.0;     // B_n
  double intensity_sup = 0.0; // C_{n,N}
  double lower_rate = 0.0;    // L_{0,xi}
  double upper_value = 0.0;   // U_xi
  double upper_rate = 0.0;    // U_{0,xi}
  double lower(double tau) const { return (tau + 1.0) * lower_rate; }
  double upper(double tau) const { return (tau + 1.0) * upper_rate; }
};

/// w(t_j, lambda_m) for one distress state; row j is time level t_j.
struct ValueSurface {
  DistressState state;
  Grid grid;
  double horizon = 0.0;
  Eigen::MatrixXd w;
  SolveOptions options;
  Bounds bounds;
  bool analytic = false;
  /// Largest number of inner iterations used by any time step.
  int inner_iterations = 0;

  double dt() const { return horizon / (grid.n_time - 1); }
  double time(int j) const { return j * dt(); }
  /// Linear interpolation in lambda and t; arguments are clamped to the grid.
  double value(double t, double lambda) const;
  /// Linear interpolation in lambda on time level j.
  double value_at_level(int j, double lambda) const;
};

using SurfaceMap = std::map<DistressState, std::shared_ptr<const ValueSurface>>;

/// Closed form gamma r (T - t) of the all-distressed state.
ValueSurface solve_terminal_state(const MarketConfig& cfg, const Grid& grid);

/// sum over live i of h_tilde_i exp(w_child_i(t, J_i lambda) - v) + rho.
double xi_coupling(const MarketConfig& cfg, DistressState z, double t, const SimplexPoint& lambda, double v,
                   const SurfaceMap& children);

/// L_xi / U_xi ingredients of state z from its solved children, with sup and
/// inf taken over the lambda nodes of the grid.
Bounds bounds(const MarketConfig& cfg, const Grid& grid, DistressState z, const SurfaceMap& children);

/// Backward time stepper of one distress state (K = 2). Node coefficients,
/// jump-revised points and their interpolation weights are precomputed.
class SemilinearStepper {
 public:
  SemilinearStepper(const MarketConfig& cfg, const Grid& grid, DistressState z, const SurfaceMap& children,
                    const SolveOptions& opts, const Bounds& envelope);

  /// Computes level j from level j + 1. Returns the number of inner iterations.
  int step(int j, const Eigen::VectorXd& next, Eigen::VectorXd& out) const;

 private:
  struct Coupling {
    const ValueSurface* child;
    Eigen::VectorXd weight;    // h_tilde at every node
    std::vector<int> index;    // left node of the revised point
    Eigen::VectorXd frac;      // position inside the cell
  };

  void explicit_terms(double tau, const Eigen::VectorXd& u, Eigen::VectorXd& quad) const;

  const MarketConfig& cfg_;
  Grid grid_;
  DistressState z_;
  SolveOptions opts_;
  Bounds envelope_;
  double dt_;
  double horizon_;
  double live_factor_;          // gamma / (1 - gamma)
  Eigen::VectorXd sigma_sq_;    // sigma sigma^T
  Eigen::VectorXd sigma_z_sq_;  // sigma_z sigma_z^T
  Eigen::VectorXd theta_;
  Eigen::VectorXd rho_;
  std::vector<Coupling> couplings_;
};

/// One backward step of the semilinear PDE of state z, level j+1 -> j.
Eigen::VectorXd step_semilinear(const MarketConfig& cfg, const Grid& grid, DistressState z,
                                const SurfaceMap& children, int j, const Eigen::VectorXd& next,
                                const SolveOptions& opts);

/// Solves state z on the whole grid given its children.
ValueSurface solve_state(const MarketConfig& cfg, const Grid& grid, DistressState z, const SurfaceMap& children,
                         const SolveOptions& opts);

struct StateReduction {
  /// Canonical representative of every one of the 2^N states.
  std::map<DistressState, DistressState> canonical;
  int solve_count = 0;
};

/// Groups of exchangeable stocks (group id per stock). Throws ConfigError
/// when two stocks of a group are not exchangeable in the coefficient tables.
StateReduction reduce_states(const MarketConfig& cfg, const std::vector<int>& group_of_stock);

/// All distress states in order of decreasing popcount. With a reduction,
/// only canonical states are solved and the others share their surface.
SurfaceMap recursive_solve(const MarketConfig& cfg, const Grid& grid, const SolveOptions& opts,
                           const StateReduction* reduction = nullptr);

/// sqrt(dt dlambda sum (a - b)^2) over the grid.
double grid_l2_distance(const ValueSurface& a, const ValueSurface& b);

/// For each m: max over states of the grid-L2 distance between the
/// m-truncated and the direct solve.
std::vector<double> stampacchia_convergence(const MarketConfig& cfg, const Grid& grid,
                                            const std::vector<double>& m_sequence,
                                            const SolveOptions& base = {});

/// Columns t, lambda, w; row-major by time then lambda.
void write_surface_csv(const ValueSurface& surface, const std::string& path);

}  // namespace contagion
