#include "contagion/hjb.hpp"

#include "contagion/csv.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace contagion {

namespace {

void require_two_regimes(const MarketConfig& cfg) {
  if (cfg.n_regimes() != 2) throw ConfigError("the PDE solver supports two regimes only");
}

const ValueSurface& child_of(const SurfaceMap& children, DistressState z, int i) {
  const DistressState c = flip(z, i);
  const auto it = children.find(c);
  if (it == children.end() || !it->second) {
    throw std::invalid_argument("missing child surface for state " + c.str());
  }
  return *it->second;
}

/// Solves a tridiagonal system in place (Thomas algorithm); rhs becomes the solution.
void solve_tridiagonal(const Eigen::VectorXd& lower, Eigen::VectorXd diag, const Eigen::VectorXd& upper,
                       Eigen::VectorXd& rhs) {
  const Eigen::Index n = diag.size();
  for (Eigen::Index m = 1; m < n; ++m) {
    const double f = lower(m) / diag(m - 1);
    diag(m) -= f * upper(m - 1);
    rhs(m) -= f * rhs(m - 1);
  }
  rhs(n - 1) /= diag(n - 1);
  for (Eigen::Index m = n - 2; m >= 0; --m) rhs(m) = (rhs(m) - upper(m) * rhs(m + 1)) / diag(m);
}

/// Centered differences inside, second-order one-sided at the two ends.
void nodal_gradient(const Eigen::VectorXd& u, double h, Eigen::VectorXd& g) {
  const Eigen::Index n = u.size();
  g.resize(n);
  for (Eigen::Index m = 1; m + 1 < n; ++m) g(m) = (u(m + 1) - u(m - 1)) / (2.0 * h);
  g(0) = (-3.0 * u(0) + 4.0 * u(1) - u(2)) / (2.0 * h);
  g(n - 1) = (3.0 * u(n - 1) - 4.0 * u(n - 2) + u(n - 3)) / (2.0 * h);
}

}  // namespace

// ---------------------------------------------------------------------------
// Options and surfaces

void Grid::validate() const {
  if (n_space < 3) throw ConfigError("grid.n_space must be at least 3");
  if (n_time < 2) throw ConfigError("grid.n_time must be at least 2");
}

void SolveOptions::validate() const {
  if (mode == Mode::stampacchia && !(truncation >= 1.0)) {
    throw ConfigError("solve.truncation must be at least 1 in stampacchia mode");
  }
  if (!(newton_tol > 0.0)) throw ConfigError("solve.newton_tol must be positive");
  if (max_inner_iters < 1) throw ConfigError("solve.max_inner_iters must be at least 1");
}

std::string to_string(SolveOptions::Mode mode) {
  return mode == SolveOptions::Mode::direct ? "direct" : "stampacchia";
}

std::string to_string(SolveOptions::Boundary boundary) {
  return boundary == SolveOptions::Boundary::degenerate ? "degenerate" : "dirichlet_zero";
}

std::string to_string(JumpDrift drift) { return drift == JumpDrift::compensated ? "compensated" : "omitted"; }

double ValueSurface::value_at_level(int j, double lambda) const {
  const int n = grid.n_space;
  const double x = std::clamp(lambda, 0.0, 1.0) * (n - 1);
  const int m = std::min(static_cast<int>(x), n - 2);
  const double f = x - m;
  return (1.0 - f) * w(j, m) + f * w(j, m + 1);
}

double ValueSurface::value(double t, double lambda) const {
  const double y = std::clamp(t / dt(), 0.0, static_cast<double>(grid.n_time - 1));
  const int j = std::min(static_cast<int>(y), grid.n_time - 2);
  const double f = y - j;
  return (1.0 - f) * value_at_level(j, lambda) + f * value_at_level(j + 1, lambda);
}

ValueSurface solve_terminal_state(const MarketConfig& cfg, const Grid& grid) {
  grid.validate();
  ValueSurface s;
  s.state = DistressState::all(cfg.n_stocks());
  s.grid = grid;
  s.horizon = cfg.horizon;
  s.analytic = true;
  s.w.resize(grid.n_time, grid.n_space);
  const double rate = cfg.gamma * cfg.rate;
  for (int j = 0; j < grid.n_time; ++j) {
    s.w.row(j).setConstant(j == grid.n_time - 1 ? 0.0 : rate * (cfg.horizon - s.time(j)));
  }
  s.bounds = bounds(cfg, grid, s.state, {});
  return s;
}

double xi_coupling(const MarketConfig& cfg, DistressState z, double t, const SimplexPoint& lambda, double v,
                   const SurfaceMap& children) {
  double xi = theta_rho(cfg, t, lambda, z).rho;
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    if (z.distressed(i)) continue;
    const ValueSurface& child = child_of(children, z, i);
    const SimplexPoint revised = jump_revision(cfg, t, lambda, i, z);
    xi += tilde_intensity(cfg, t, lambda, i, z) * std::exp(child.value(t, revised.coords(0)) - v);
  }
  return xi;
}

Bounds bounds(const MarketConfig& cfg, const Grid& grid, DistressState z, const SurfaceMap& children) {
  require_two_regimes(cfg);
  Bounds b;
  b.rho_inf = std::numeric_limits<double>::infinity();
  b.rho_sup = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < grid.n_space; ++m) {
    const SimplexPoint lambda = SimplexPoint::scalar(grid.lambda(m));
    const double rho = theta_rho(cfg, 0.0, lambda, z).rho;
    b.rho_inf = std::min(b.rho_inf, rho);
    b.rho_sup = std::max(b.rho_sup, rho);
    double total = 0.0;
    for (int i = 0; i < cfg.n_stocks(); ++i) {
      if (z.alive(i)) total += tilde_intensity(cfg, 0.0, lambda, i, z);
    }
    b.intensity_sup = std::max(b.intensity_sup, total);
  }
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    if (z.alive(i)) b.child_sup = std::max(b.child_sup, child_of(children, z, i).w.cwiseAbs().maxCoeff());
  }
  b.lower_rate = std::min(0.0, b.rho_inf);
  const double lower_at_t = b.lower(cfg.horizon);
  b.upper_value = b.intensity_sup * std::exp(b.child_sup - lower_at_t) + b.rho_sup;
  b.upper_rate = std::max(0.0, b.upper_value);
  return b;
}

// ---------------------------------------------------------------------------
// Time stepping

SemilinearStepper::SemilinearStepper(const MarketConfig& cfg, const Grid& grid, DistressState z,
                                     const SurfaceMap& children, const SolveOptions& opts, const Bounds& envelope)
    : cfg_(cfg),
      grid_(grid),
      z_(z),
      opts_(opts),
      envelope_(envelope),
      dt_(cfg.horizon / (grid.n_time - 1)),
      horizon_(cfg.horizon),
      live_factor_(cfg.gamma / (1.0 - cfg.gamma)) {
  require_two_regimes(cfg);
  grid.validate();
  opts.validate();
  const int n = grid.n_space;
  sigma_sq_.resize(n);
  sigma_z_sq_.resize(n);
  theta_.resize(n);
  rho_.resize(n);
  for (int m = 0; m < n; ++m) {
    const SimplexPoint lambda = SimplexPoint::scalar(grid.lambda(m));
    const FilterDiffusion s = sigma_matrix(cfg, 0.0, lambda, z);
    const FilterDiffusion sz = masked_sigma(cfg, 0.0, lambda, z);
    sigma_sq_(m) = s.row(0).squaredNorm();
    sigma_z_sq_(m) = sz.row(0).squaredNorm();
    const ThetaRho tr = theta_rho(cfg, 0.0, lambda, z, opts.jump_drift);
    theta_(m) = tr.theta(0);
    rho_(m) = tr.rho;
  }
  const double h = grid.dlambda();
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    if (z.distressed(i)) continue;
    Coupling c;
    c.child = &child_of(children, z, i);
    if (c.child->grid.n_space != n || c.child->grid.n_time != grid.n_time) {
      throw std::invalid_argument("child surface " + c.child->state.str() + " lives on a different grid");
    }
    c.weight.resize(n);
    c.index.resize(static_cast<std::size_t>(n));
    c.frac.resize(n);
    for (int m = 0; m < n; ++m) {
      const SimplexPoint lambda = SimplexPoint::scalar(grid.lambda(m));
      c.weight(m) = tilde_intensity(cfg, 0.0, lambda, i, z);
      const double x = std::clamp(jump_revision(cfg, 0.0, lambda, i, z).coords(0), 0.0, 1.0) / h;
      const int left = std::min(static_cast<int>(x), n - 2);
      c.index[static_cast<std::size_t>(m)] = left;
      c.frac(m) = x - left;
    }
    couplings_.push_back(std::move(c));
  }
}

void SemilinearStepper::explicit_terms(double tau, const Eigen::VectorXd& u, Eigen::VectorXd& quad) const {
  const double h = grid_.dlambda();
  Eigen::VectorXd g;
  nodal_gradient(u, h, g);
  const Eigen::VectorXd g2 = g.cwiseProduct(g);
  if (opts_.mode == SolveOptions::Mode::direct) {
    quad = 0.5 * (sigma_sq_ + live_factor_ * sigma_z_sq_).cwiseProduct(g2);
    return;
  }
  // Stampacchia truncation, numerator with the gradient of the clipped surface
  const Eigen::VectorXd clipped = u.cwiseMax(envelope_.lower(tau)).cwiseMin(envelope_.upper(tau));
  Eigen::VectorXd gc;
  nodal_gradient(clipped, h, gc);
  for (Eigen::Index m = 0; m < u.size(); ++m) {
    const bool inside = u(m) > envelope_.lower(tau) && u(m) < envelope_.upper(tau);
    const double mixed = inside ? g(m) * gc(m) : 0.0;
    const double full = sigma_sq_(m);
    const double live = sigma_z_sq_(m);
    quad(m) = 0.5 * full * mixed * truncation_factor(full * g2(m), opts_.truncation) +
              0.5 * live_factor_ * live * mixed * truncation_factor(live * g2(m), opts_.truncation);
  }
}

int SemilinearStepper::step(int j, const Eigen::VectorXd& next, Eigen::VectorXd& out) const {
  const int n = grid_.n_space;
  const double h = grid_.dlambda();
  const double tau = horizon_ - j * dt_;
  const bool dirichlet = opts_.boundary == SolveOptions::Boundary::dirichlet_zero;

  // implicit linear operator: -dt (a D2 + theta D1)
  Eigen::VectorXd lower = Eigen::VectorXd::Zero(n), diag = Eigen::VectorXd::Ones(n),
                  upper = Eigen::VectorXd::Zero(n);
  for (int m = 1; m + 1 < n; ++m) {
    const double a = 0.5 * sigma_sq_(m) / (h * h);
    const double c = theta_(m) / (2.0 * h);
    lower(m) = -dt_ * (a - c);
    diag(m) = 1.0 + 2.0 * dt_ * a;
    upper(m) = -dt_ * (a + c);
  }
  // boundary rows: one-sided second-order gradient, third entry eliminated with the neighbour row
  double first_extra = 0.0, last_extra = 0.0;
  if (!dirichlet) {
    const double c0 = dt_ * theta_(0) / (2.0 * h);
    diag(0) = 1.0 + 3.0 * c0;
    upper(0) = -4.0 * c0;
    first_extra = c0;  // coefficient of w_2
    const double cn = dt_ * theta_(n - 1) / (2.0 * h);
    diag(n - 1) = 1.0 - 3.0 * cn;
    lower(n - 1) = 4.0 * cn;
    last_extra = -cn;  // coefficient of w_{n-3}
  }

  Eigen::VectorXd iterate = next;
  Eigen::VectorXd quad(n), rhs(n), d(n), coupling(n);
  int it = 0;
  for (; it < opts_.max_inner_iters;) {
    explicit_terms(tau, iterate, quad);
    coupling.setZero();
    for (const Coupling& c : couplings_) {
      const auto row = c.child->w.row(j);
      for (int m = 0; m < n; ++m) {
        const int left = c.index[static_cast<std::size_t>(m)];
        const double child = (1.0 - c.frac(m)) * row(left) + c.frac(m) * row(left + 1);
        coupling(m) += c.weight(m) * std::exp(child - iterate(m));
      }
    }
    for (int m = 0; m < n; ++m) {
      if (!std::isfinite(quad(m)) || !std::isfinite(coupling(m))) {
        throw NumericalError("divergent nonlinear terms in state " + z_.str() + " at time level " +
                             std::to_string(j) + ", node " + std::to_string(m) +
                             " (lambda = " + std::to_string(grid_.lambda(m)) + ")");
      }
    }
    // Newton linearization of sum h exp(c - w) around the iterate
    rhs = next + dt_ * (quad + rho_ + coupling.cwiseProduct(Eigen::VectorXd::Ones(n) + iterate));
    d = diag + dt_ * coupling;
    Eigen::VectorXd lo = lower, up = upper;
    if (dirichlet) {
      d(0) = d(n - 1) = 1.0;
      up(0) = lo(n - 1) = 0.0;
      rhs(0) = rhs(n - 1) = 0.0;
    } else {
      if (first_extra != 0.0) {
        const double f = first_extra / up(1);
        d(0) -= f * lo(1);
        up(0) -= f * d(1);
        rhs(0) -= f * rhs(1);
      }
      if (last_extra != 0.0) {
        const double f = last_extra / lo(n - 2);
        d(n - 1) -= f * up(n - 2);
        lo(n - 1) -= f * d(n - 2);
        rhs(n - 1) -= f * rhs(n - 2);
      }
    }
    solve_tridiagonal(lo, d, up, rhs);
    ++it;
    const double change = (rhs - iterate).cwiseAbs().maxCoeff();
    iterate = rhs;
    if (!std::isfinite(change)) break;
    if (change < opts_.newton_tol) break;
  }
  out = iterate;
  for (int m = 0; m < n; ++m) {
    if (!std::isfinite(out(m))) {
      throw NumericalError("non-finite value in state " + z_.str() + " at time level " + std::to_string(j) +
                           ", node " + std::to_string(m) + " (lambda = " + std::to_string(grid_.lambda(m)) + ")");
    }
  }
  return it;
}

Eigen::VectorXd step_semilinear(const MarketConfig& cfg, const Grid& grid, DistressState z,
                                const SurfaceMap& children, int j, const Eigen::VectorXd& next,
                                const SolveOptions& opts) {
  const Bounds env = bounds(cfg, grid, z, children);
  const SemilinearStepper stepper(cfg, grid, z, children, opts, env);
  Eigen::VectorXd out;
  stepper.step(j, next, out);
  return out;
}

ValueSurface solve_state(const MarketConfig& cfg, const Grid& grid, DistressState z, const SurfaceMap& children,
                         const SolveOptions& opts) {
  ValueSurface s;
  s.state = z;
  s.grid = grid;
  s.horizon = cfg.horizon;
  s.options = opts;
  s.bounds = bounds(cfg, grid, z, children);
  const SemilinearStepper stepper(cfg, grid, z, children, opts, s.bounds);
  s.w.resize(grid.n_time, grid.n_space);
  s.w.row(grid.n_time - 1).setZero();
  Eigen::VectorXd next = Eigen::VectorXd::Zero(grid.n_space), out;
  for (int j = grid.n_time - 2; j >= 0; --j) {
    s.inner_iterations = std::max(s.inner_iterations, stepper.step(j, next, out));
    s.w.row(j) = out.transpose();
    next.swap(out);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Recursion over distress states

namespace {

DistressState swap_stocks(DistressState z, int a, int b) {
  std::uint32_t bits = z.bits();
  const std::uint32_t ba = (bits >> a) & 1u, bb = (bits >> b) & 1u;
  if (ba != bb) bits ^= (1u << a) | (1u << b);
  return {z.size(), bits};
}

bool exchangeable(const MarketConfig& cfg, int a, int b) {
  const int n = cfg.n_stocks();
  for (int s = 0; s < cfg.n_states(); ++s) {
    const DistressState z(n, static_cast<std::uint32_t>(s));
    const DistressState zs = swap_stocks(z, a, b);
    for (int l = 0; l < n; ++l) {
      // stock l in z plays the role of stock l' in the swapped state
      const int lp = l == a ? b : (l == b ? a : l);
      if (cfg.volatility(l, z) != cfg.volatility(lp, zs)) return false;
      for (int k = 0; k < cfg.n_regimes(); ++k) {
        if (cfg.drift(l, k, z) != cfg.drift(lp, k, zs)) return false;
        if (cfg.intensity(l, k, z) != cfg.intensity(lp, k, zs)) return false;
      }
    }
  }
  return true;
}

}  // namespace

StateReduction reduce_states(const MarketConfig& cfg, const std::vector<int>& group_of_stock) {
  const int n = cfg.n_stocks();
  if (static_cast<int>(group_of_stock.size()) != n) {
    throw ConfigError("group assignment must list one group per stock");
  }
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < n; ++i) members[group_of_stock[static_cast<std::size_t>(i)]].push_back(i);
  for (const auto& [group, stocks] : members) {
    for (std::size_t q = 1; q < stocks.size(); ++q) {
      if (!exchangeable(cfg, stocks[0], stocks[q])) {
        throw ConfigError("stocks " + std::to_string(stocks[0] + 1) + " and " + std::to_string(stocks[q] + 1) +
                          " are declared in group " + std::to_string(group) + " but are not exchangeable");
      }
    }
  }
  StateReduction out;
  std::set<DistressState> distinct;
  for (int s = 0; s < cfg.n_states(); ++s) {
    const DistressState z(n, static_cast<std::uint32_t>(s));
    std::uint32_t bits = 0;
    for (const auto& [group, stocks] : members) {
      int count = 0;
      for (int i : stocks) count += z.distressed(i);
      for (int q = 0; q < count; ++q) bits |= 1u << stocks[static_cast<std::size_t>(q)];
    }
    const DistressState rep(n, bits);
    out.canonical[z] = rep;
    distinct.insert(rep);
  }
  out.solve_count = static_cast<int>(distinct.size());
  return out;
}

SurfaceMap recursive_solve(const MarketConfig& cfg, const Grid& grid, const SolveOptions& opts,
                           const StateReduction* reduction) {
  require_two_regimes(cfg);
  grid.validate();
  opts.validate();
  const int n = cfg.n_stocks();
  std::vector<DistressState> order;
  for (int s = 0; s < cfg.n_states(); ++s) order.emplace_back(n, static_cast<std::uint32_t>(s));
  std::stable_sort(order.begin(), order.end(),
                   [](DistressState a, DistressState b) { return a.count() > b.count(); });

  auto canonical = [&](DistressState z) { return reduction ? reduction->canonical.at(z) : z; };

  SurfaceMap solved;
  for (DistressState z : order) {
    if (canonical(z) != z) continue;
    if (z.all_distressed() && opts.analytic_terminal) {
      solved[z] = std::make_shared<const ValueSurface>(solve_terminal_state(cfg, grid));
      continue;
    }
    SurfaceMap children;
    for (int i = 0; i < n; ++i) {
      if (z.alive(i)) children[flip(z, i)] = solved.at(canonical(flip(z, i)));
    }
    solved[z] = std::make_shared<const ValueSurface>(solve_state(cfg, grid, z, children, opts));
  }
  SurfaceMap all;
  for (DistressState z : order) all[z] = solved.at(canonical(z));
  return all;
}

double grid_l2_distance(const ValueSurface& a, const ValueSurface& b) {
  if (a.w.rows() != b.w.rows() || a.w.cols() != b.w.cols()) {
    throw std::invalid_argument("grid_l2_distance: surfaces on different grids");
  }
  return std::sqrt(a.dt() * a.grid.dlambda() * (a.w - b.w).squaredNorm());
}

std::vector<double> stampacchia_convergence(const MarketConfig& cfg, const Grid& grid,
                                            const std::vector<double>& m_sequence, const SolveOptions& base) {
  SolveOptions direct = base;
  direct.mode = SolveOptions::Mode::direct;
  const SurfaceMap reference = recursive_solve(cfg, grid, direct);
  std::vector<double> distances;
  for (double m : m_sequence) {
    SolveOptions truncated = base;
    truncated.mode = SolveOptions::Mode::stampacchia;
    truncated.truncation = m;
    const SurfaceMap approx = recursive_solve(cfg, grid, truncated);
    double worst = 0.0;
    for (const auto& [z, surface] : reference) {
      worst = std::max(worst, grid_l2_distance(*surface, *approx.at(z)));
    }
    distances.push_back(worst);
  }
  return distances;
}

void write_surface_csv(const ValueSurface& surface, const std::string& path) {
  std::string out = "t,lambda,w\n";
  out.reserve(static_cast<std::size_t>(surface.w.size()) * 40);
  for (int j = 0; j < surface.grid.n_time; ++j) {
    const std::string t = format_number(surface.time(j)) + ',';
    for (int m = 0; m < surface.grid.n_space; ++m) {
      out += t;
      out += format_number(surface.grid.lambda(m));
      out += ',';
      out += format_number(surface.w(j, m));
      out += '\n';
    }
  }
  write_file_atomic(path, out);
}

}  // namespace contagion
