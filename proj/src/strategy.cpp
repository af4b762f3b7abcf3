#include "contagion/strategy.hpp"

#include "contagion/csv.hpp"

#include <algorithm>
#include <cmath>

namespace contagion {

StockVector feedback_from_gradient(const MarketConfig& cfg, const RegimeVector& grad_w, double t,
                                   const SimplexPoint& lambda, DistressState z) {
  const int n = cfg.n_stocks();
  const FilterDiffusion sigma = sigma_matrix(cfg, t, lambda, z);
  const StockVector gam = gamma_vec(cfg, t, lambda, z);
  StockVector pi = StockVector::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (z.distressed(i)) continue;
    const double vol = cfg.volatility(i, z);
    const double exposure = grad_w.dot(sigma.col(i));
    pi(i) = (exposure / vol - gam(i) / (vol * vol)) / (1.0 - cfg.gamma);
  }
  return pi;
}

PhiValues phi_and_phistar(const MarketConfig& cfg, const RegimeVector& grad_w, double t, const SimplexPoint& lambda,
                          DistressState z, const StockVector& pi) {
  const int n = cfg.n_stocks();
  const FilterDiffusion sigma = sigma_matrix(cfg, t, lambda, z);
  const StockVector gam = gamma_vec(cfg, t, lambda, z);
  const double drift = grad_w.dot(beta_varpi(cfg, t, lambda));
  auto phi = [&](const StockVector& p) {
    double value = drift;
    for (int i = 0; i < n; ++i) {
      if (z.distressed(i)) continue;
      const double vol = cfg.volatility(i, z);
      value += cfg.gamma * grad_w.dot(sigma.col(i)) * vol * p(i) - cfg.gamma * p(i) * gam(i) -
               0.5 * cfg.gamma * (1.0 - cfg.gamma) * vol * vol * p(i) * p(i);
    }
    return value;
  };
  return {phi(pi), phi(feedback_from_gradient(cfg, grad_w, t, lambda, z))};
}

// ---------------------------------------------------------------------------
// FeedbackStrategy

FeedbackStrategy::FeedbackStrategy(const MarketConfig& cfg, const SurfaceMap& surfaces)
    : cfg_(cfg), surfaces_(surfaces), rules_(std::size_t{1} << cfg.n_stocks()) {
  if (cfg.n_regimes() != 2) throw ConfigError("feedback strategies from surfaces need two regimes");
  const int n = cfg.n_stocks();
  std::map<const ValueSurface*, std::shared_ptr<const Table>> built;
  for (const auto& [z, surface] : surfaces) {
    if (z.size() != n) throw std::invalid_argument("surface state " + z.str() + " does not match the market");
    auto& shared = built[surface.get()];
    if (!shared) {
      auto t = std::make_shared<Table>();
      t->grid = surface->grid;
      t->dt = surface->dt();
      const int ns = t->grid.n_space;
      const double h = t->grid.dlambda();
      const Eigen::MatrixXd& w = surface->w;
      t->grad.resize(w.rows(), ns);
      t->grad.col(0) = (-3.0 * w.col(0) + 4.0 * w.col(1) - w.col(2)) / (2.0 * h);
      t->grad.col(ns - 1) = (3.0 * w.col(ns - 1) - 4.0 * w.col(ns - 2) + w.col(ns - 3)) / (2.0 * h);
      for (int m = 1; m + 1 < ns; ++m) t->grad.col(m) = (w.col(m + 1) - w.col(m - 1)) / (2.0 * h);
      shared = std::move(t);
    }
    Rule& r = rules_[z.bits()];
    r.table = shared;
    r.spread = r.level = r.slope = Eigen::ArrayXd::Zero(n);
    const StockVector gam0 = gamma_vec(cfg, 0.0, SimplexPoint::scalar(0.0), z);
    const StockVector gam1 = gamma_vec(cfg, 0.0, SimplexPoint::scalar(1.0), z);
    for (int i = 0; i < n; ++i) {
      if (z.distressed(i)) continue;
      const double vol = cfg.volatility(i, z);
      const double scale = 1.0 / (vol * vol * (1.0 - cfg.gamma));
      r.spread(i) = (log_drift(cfg, i, 0, z) - log_drift(cfg, i, 1, z)) * scale;
      r.level(i) = gam0(i) * scale;
      r.slope(i) = (gam1(i) - gam0(i)) * scale;
    }
  }
}

const FeedbackStrategy::Rule& FeedbackStrategy::rule(DistressState z) const {
  if (z.size() != cfg_.n_stocks() || !rules_[z.bits()].table) {
    throw std::invalid_argument("no value surface for state " + z.str());
  }
  return rules_[z.bits()];
}

double FeedbackStrategy::gradient(const Table& tab, double t, double lambda) const {
  const int ns = tab.grid.n_space, nt = tab.grid.n_time;
  const double x = std::clamp(lambda, 0.0, 1.0) * (ns - 1);
  const int m = std::min(static_cast<int>(x), ns - 2);
  const double fx = x - m;
  const double y = std::clamp(t / tab.dt, 0.0, static_cast<double>(nt - 1));
  const int j = std::min(static_cast<int>(y), nt - 2);
  const double fy = y - j;
  const auto& g = tab.grad;
  return (1.0 - fy) * ((1.0 - fx) * g(j, m) + fx * g(j, m + 1)) +
         fy * ((1.0 - fx) * g(j + 1, m) + fx * g(j + 1, m + 1));
}

double FeedbackStrategy::gradient(double t, double lambda, DistressState z) const {
  return gradient(*rule(z).table, t, lambda);
}

StockVector FeedbackStrategy::operator()(double t, const SimplexPoint& lambda, DistressState z) const {
  const Rule& r = rule(z);
  const double l = lambda.coords(0);
  const double g = gradient(*r.table, t, l);
  return (r.spread * (g * l * (1.0 - l)) - r.level - r.slope * l).matrix();
}

FeedbackFunction FeedbackStrategy::function(double scale) const {
  return [this, scale](double t, const SimplexPoint& lambda, DistressState z) -> StockVector {
    return scale * (*this)(t, lambda, z);
  };
}

double value_terminal_utility(const MarketConfig& cfg, const SurfaceMap& surfaces, double lambda, DistressState z) {
  const auto it = surfaces.find(z);
  if (it == surfaces.end()) throw std::invalid_argument("no value surface for state " + z.str());
  const double v = cfg.initial_wealth;
  return std::pow(v, cfg.gamma) / cfg.gamma * std::exp(it->second->value(0.0, lambda));
}

std::string strategy_csv(const FeedbackStrategy& strategy, const std::vector<double>& times,
                         const std::vector<double>& lambdas, const std::vector<DistressState>& states) {
  const int n = strategy.config().n_stocks();
  std::string out = "t,lambda,state";
  for (int i = 0; i < n; ++i) out += ",pi_" + std::to_string(i + 1);
  out += '\n';
  for (DistressState z : states) {
    for (double t : times) {
      for (double l : lambdas) {
        const StockVector pi = strategy(t, SimplexPoint::scalar(l), z);
        out += format_number(t) + ',' + format_number(l) + ',' + z.str();
        for (int i = 0; i < n; ++i) out += ',' + format_number(pi(i));
        out += '\n';
      }
    }
  }
  return out;
}

}  // namespace contagion
