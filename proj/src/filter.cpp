#include "contagion/filter.hpp"

#include <algorithm>
#include <cmath>

namespace contagion {

namespace {

// Floor applied before renormalization; keeps every coordinate strictly positive.
constexpr double kProbabilityFloor = 1e-14;

RegimeVector predict(const Eigen::MatrixXd& generator, const RegimeVector& p, double dt) {
  return p + dt * (generator.transpose() * p);
}

int draw_categorical(const RegimeVector& weights, double u) {
  const double total = weights.sum();
  double acc = 0.0;
  for (int k = 0; k < weights.size(); ++k) {
    acc += weights(k);
    if (u * total < acc) return k;
  }
  // u * total landed on the rounding gap; take the last state with mass
  for (int k = static_cast<int>(weights.size()) - 1; k >= 0; --k) {
    if (weights(k) > 0.0) return k;
  }
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// SimConfig

int SimConfig::n_steps() const { return std::max(1, static_cast<int>(std::lround(horizon / dt))); }

std::string SimConfig::validate(const MarketConfig& cfg) const {
  if (!(dt > 0.0)) throw ConfigError("sim.dt must be positive");
  if (!(horizon > 0.0)) throw ConfigError("sim.horizon must be positive");
  if (horizon > cfg.horizon * (1.0 + 1e-12)) throw ConfigError("sim.horizon exceeds the market horizon");
  if (dt > horizon) throw ConfigError("sim.dt exceeds sim.horizon");
  if (n_paths < 1) throw ConfigError("sim.n_paths must be positive");
  double h_max = 0.0;
  for (int s = 0; s < cfg.n_states(); ++s) {
    const DistressState z(cfg.n_stocks(), static_cast<std::uint32_t>(s));
    for (int i = 0; i < cfg.n_stocks(); ++i) {
      for (int k = 0; k < cfg.n_regimes(); ++k) h_max = std::max(h_max, cfg.intensity(i, k, z));
    }
  }
  if (h_max * dt >= 0.5) {
    return "max intensity * dt = " + std::to_string(h_max * dt) + " >= 0.5; distress sampling is coarse";
  }
  return {};
}

void renormalize(RegimeVector& p, double tolerance) {
  for (int k = 0; k < p.size(); ++k) {
    if (!std::isfinite(p(k)) || p(k) < -tolerance || p(k) > 1.0 + tolerance) {
      throw NumericalError("filter left the simplex (coordinate " + std::to_string(k + 1) + " = " +
                           std::to_string(p(k)) + "); reduce the time step");
    }
  }
  p = p.cwiseMax(kProbabilityFloor).cwiseMin(1.0);
  p /= p.sum();
}

void add_filter_diffusion(const RegimeVector& p, const CoefficientTable::State& st, const StockVector& dI,
                          double dt, FilterScheme scheme, RegimeVector& next) {
  const int n = static_cast<int>(dI.size());
  const int K = static_cast<int>(p.size());
  RegimeVector lin = RegimeVector::Zero(K);
  RegimeVector quad = RegimeVector::Zero(K);
  for (int i = 0; i < n; ++i) {
    const double inv_vol = 1.0 / st.volatility(i);
    const double c_hat = st.log_drift.row(i).dot(p) * inv_vol;
    for (int k = 0; k < K; ++k) {
      const double d = st.log_drift(i, k) * inv_vol - c_hat;
      lin(k) += d * dI(i);
      quad(k) += d * d;
    }
  }
  for (int k = 0; k < K; ++k) next(k) += p(k) * lin(k);
  if (scheme == FilterScheme::milstein) {
    RegimeVector q = lin.cwiseProduct(lin) - dt * quad;
    const double q_bar = p.dot(q);
    for (int k = 0; k < K; ++k) next(k) += 0.5 * p(k) * (q(k) - q_bar);
  }
}

// ---------------------------------------------------------------------------
// TruthSimulator

TruthSimulator::TruthSimulator(const MarketConfig& cfg, const CoefficientTable& table, PathRng& rng,
                               const RegimeVector& prior, DistressState z0, double dt)
    : cfg_(cfg), table_(table), rng_(rng), dt_(dt), z_(z0) {
  const int n = cfg.n_stocks();
  hazard_ = StockVector::Zero(n);
  threshold_.resize(n);
  for (int i = 0; i < n; ++i) threshold_(i) = rng_.exponential();
  tau_.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i) {
    if (z0.distressed(i)) tau_[static_cast<std::size_t>(i)] = 0.0;
  }
  regime_ = draw_categorical(prior, rng_.uniform());
  next_switch_ = 0.0;
  draw_holding_time();
}

void TruthSimulator::draw_holding_time() {
  const double rate = -cfg_.generator(regime_, regime_);
  next_switch_ = rate > 0.0 ? next_switch_ + rng_.exponential() / rate : std::numeric_limits<double>::infinity();
}

void TruthSimulator::step(TruthIncrement& inc) {
  const int n = cfg_.n_stocks();
  const double sqdt = std::sqrt(dt_);
  const auto& st = table_[z_];

  inc.regime = regime_;
  inc.state = z_;
  inc.dW.resize(n);
  inc.dY.resize(n);
  for (int i = 0; i < n; ++i) {
    inc.dW(i) = sqdt * rng_.normal();
    inc.dY(i) = st.log_drift(i, regime_) * dt_ + st.volatility(i) * inc.dW(i);
  }

  const double end = static_cast<double>(steps_ + 1) * dt_;
  double s = t_;
  int distressed = -1;
  for (;;) {
    const double seg_end = std::min(next_switch_, end);
    const auto& cur = table_[z_];
    if (distressed < 0) {
      int first = -1;
      double first_time = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        if (z_.distressed(i)) continue;
        const double rate = cur.intensity(i, regime_);
        const double need = threshold_(i) - hazard_(i);
        double c;
        if (need <= 0.0) {
          c = s + (rate > 0.0 ? need / rate : 0.0);
        } else if (rate > 0.0) {
          c = s + need / rate;
        } else {
          continue;
        }
        if (c <= seg_end && c < first_time) {
          first = i;
          first_time = c;
        }
      }
      if (first >= 0) {
        const double at = std::max(first_time, s);
        for (int i = 0; i < n; ++i) {
          if (!z_.distressed(i)) hazard_(i) += cur.intensity(i, regime_) * (at - s);
        }
        hazard_(first) = std::max(hazard_(first), threshold_(first));
        tau_[static_cast<std::size_t>(first)] = at;
        z_ = flip(z_, first);
        distressed = first;
        s = at;
        continue;
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!z_.distressed(i)) hazard_(i) += cur.intensity(i, regime_) * (seg_end - s);
    }
    s = seg_end;
    if (next_switch_ > end) break;
    RegimeVector rates = cfg_.generator.row(regime_).transpose();
    rates(regime_) = 0.0;
    regime_ = draw_categorical(rates, rng_.uniform());
    draw_holding_time();
  }

  inc.distressed = distressed;
  ++steps_;
  t_ = end;
}

// ---------------------------------------------------------------------------
// ObservationFilter

ObservationFilter::ObservationFilter(const MarketConfig& cfg, const CoefficientTable& table,
                                     const RegimeVector& prior, DistressState z0, FilterScheme scheme)
    : cfg_(cfg), table_(table), p_(prior), z_(z0), scheme_(scheme) {}

void ObservationFilter::step(const StockVector& dY, int distressed, double dt) {
  const auto& st = table_[z_];
  const int n = cfg_.n_stocks();
  const int K = cfg_.n_regimes();

  RegimeVector next = predict(cfg_.generator, p_, dt);
  StockVector dI(n);
  for (int i = 0; i < n; ++i) {
    dI(i) = (dY(i) - st.log_drift.row(i).dot(p_) * dt) / st.volatility(i);
    if (z_.distressed(i)) continue;
    const double h_hat = st.intensity.row(i).dot(p_);
    for (int k = 0; k < K; ++k) next(k) -= p_(k) * (st.intensity(i, k) - h_hat) * dt;
  }
  add_filter_diffusion(p_, st, dI, dt, scheme_, next);
  renormalize(next);

  if (distressed >= 0) {
    const double h_hat = st.intensity.row(distressed).dot(next);
    for (int k = 0; k < K; ++k) next(k) *= st.intensity(distressed, k) / h_hat;
    renormalize(next);
    z_ = flip(z_, distressed);
  }
  p_ = next;
}

// ---------------------------------------------------------------------------
// BayesFilter

BayesFilter::BayesFilter(const MarketConfig& cfg, const CoefficientTable& table, const RegimeVector& prior,
                         DistressState z0)
    : cfg_(cfg), table_(table), p_(prior), z_(z0) {}

void BayesFilter::step(const StockVector& dY, int distressed, double dt) {
  const auto& st = table_[z_];
  const int n = cfg_.n_stocks();
  const int K = cfg_.n_regimes();

  RegimeVector loglik = RegimeVector::Zero(K);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < n; ++i) {
      const double e = (dY(i) - st.log_drift(i, k) * dt) / st.volatility(i);
      loglik(k) -= e * e / (2.0 * dt);
      if (z_.distressed(i)) continue;
      const double q = st.intensity(i, k) * dt;
      loglik(k) += (i == distressed) ? std::log(q) : std::log1p(-std::min(q, 1.0 - 1e-300));
    }
  }
  const double top = loglik.maxCoeff();
  RegimeVector post(K);
  for (int k = 0; k < K; ++k) post(k) = p_(k) * std::exp(loglik(k) - top);
  post /= post.sum();
  p_ = predict(cfg_.generator, post, dt);
  p_ /= p_.sum();
  if (distressed >= 0) z_ = flip(z_, distressed);
}

// ---------------------------------------------------------------------------
// ControlledFilter

ControlledFilter::ControlledFilter(const MarketConfig& cfg, const CoefficientTable& table, PathRng& rng,
                                   const RegimeVector& p0, DistressState z0, FilterScheme scheme)
    : cfg_(cfg), table_(table), rng_(rng), p_(p0), z_(z0), scheme_(scheme) {
  const int n = cfg.n_stocks();
  hazard_ = StockVector::Zero(n);
  threshold_.resize(n);
  for (int i = 0; i < n; ++i) threshold_(i) = rng_.exponential();
}

void ControlledFilter::step(double /*t*/, const StockVector& pi, double dt) {
  const auto& st = table_[z_];
  const int n = cfg_.n_stocks();
  const int K = cfg_.n_regimes();
  const double g = cfg_.gamma;
  const double sqdt = std::sqrt(dt);

  StockVector mu_hat(n), h_hat(n), dW(n);
  double eta = -cfg_.rate;
  for (int i = 0; i < n; ++i) {
    mu_hat(i) = st.log_drift.row(i).dot(p_);
    h_hat(i) = st.intensity.row(i).dot(p_);
    dW(i) = sqdt * rng_.normal();
    if (z_.distressed(i)) continue;
    const double b_hat = st.drift.row(i).dot(p_);
    const double vol = st.volatility(i);
    eta += pi(i) * (cfg_.rate - b_hat - h_hat(i)) + 0.5 * (1.0 - g) * pi(i) * pi(i) * vol * vol;
  }
  eta_integral_ += eta * dt;

  RegimeVector next = predict(cfg_.generator, p_, dt);
  for (int i = 0; i < n; ++i) {
    if (z_.distressed(i)) continue;
    const double control = g * pi(i) * dt;
    for (int k = 0; k < K; ++k) {
      next(k) += p_(k) * ((st.log_drift(i, k) - mu_hat(i)) * control - (st.intensity(i, k) - h_hat(i)) * dt);
    }
  }
  add_filter_diffusion(p_, st, dW, dt, scheme_, next);

  int first = -1;
  double first_fraction = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    if (z_.distressed(i)) continue;
    const double before = hazard_(i);
    hazard_(i) += h_hat(i) * dt;
    if (hazard_(i) >= threshold_(i)) {
      const double fraction = (threshold_(i) - before) / (h_hat(i) * dt);
      if (fraction < first_fraction) {
        first = i;
        first_fraction = fraction;
      }
    }
  }

  renormalize(next);
  if (first >= 0) {
    const double h_new = st.intensity.row(first).dot(next);
    for (int k = 0; k < K; ++k) next(k) *= st.intensity(first, k) / h_new;
    renormalize(next);
    z_ = flip(z_, first);
  }
  p_ = next;
}

// ---------------------------------------------------------------------------
// Path-level drivers

MarketPath simulate_truth_path(const MarketConfig& cfg, const SimConfig& sim, std::uint64_t path_index) {
  const CoefficientTable table(cfg);
  const int steps = sim.n_steps();
  const double dt = sim.step();
  const int n = cfg.n_stocks();
  PathRng rng(sim.seed, path_index, kTruthStream);
  TruthSimulator truth(cfg, table, rng, cfg.initial_filter.full(), DistressState::none(n), dt);

  MarketPath path;
  path.time.resize(static_cast<std::size_t>(steps) + 1);
  path.regime.resize(path.time.size());
  path.distress.resize(path.time.size());
  path.brownian.resize(steps, n);
  path.log_price.resize(steps + 1, n);
  path.log_price.row(0).setZero();
  path.time[0] = 0.0;
  path.regime[0] = truth.regime();
  path.distress[0] = truth.state();

  TruthIncrement inc;
  for (int j = 0; j < steps; ++j) {
    truth.step(inc);
    const auto jj = static_cast<std::size_t>(j) + 1;
    path.brownian.row(j) = inc.dW.transpose();
    path.log_price.row(j + 1) = path.log_price.row(j) + inc.dY.transpose();
    path.time[jj] = truth.time();
    path.regime[jj] = truth.regime();
    path.distress[jj] = truth.state();
  }
  path.distress_time = truth.distress_time();
  return path;
}

std::vector<MarketPath> simulate_truth(const MarketConfig& cfg, const SimConfig& sim) {
  std::vector<MarketPath> paths;
  paths.reserve(static_cast<std::size_t>(sim.n_paths));
  for (int p = 0; p < sim.n_paths; ++p) paths.push_back(simulate_truth_path(cfg, sim, static_cast<std::uint64_t>(p)));
  return paths;
}

namespace {

template <typename Filter, typename... Extra>
FilterPath filter_along(const MarketConfig& cfg, const MarketPath& path, Extra... extra) {
  const CoefficientTable table(cfg);
  const int steps = static_cast<int>(path.time.size()) - 1;
  Filter filter(cfg, table, cfg.initial_filter.full(), path.distress.front(), extra...);

  FilterPath out;
  out.time = path.time;
  out.distress = path.distress;
  out.probs.resize(steps + 1, cfg.n_regimes());
  out.probs.row(0) = filter.probabilities().transpose();
  for (int j = 0; j < steps; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const StockVector dY = (path.log_price.row(j + 1) - path.log_price.row(j)).transpose();
    int distressed = -1;
    const DistressState before = path.distress[jj];
    const DistressState after = path.distress[jj + 1];
    for (int i = 0; i < cfg.n_stocks(); ++i) {
      if (!before.distressed(i) && after.distressed(i)) distressed = i;
    }
    filter.step(dY, distressed, path.time[jj + 1] - path.time[jj]);
    out.probs.row(j + 1) = filter.probabilities().transpose();
  }
  return out;
}

}  // namespace

FilterPath run_filter(const MarketConfig& cfg, const MarketPath& path, FilterScheme scheme) {
  return filter_along<ObservationFilter>(cfg, path, scheme);
}

FilterPath hmm_oracle_filter(const MarketConfig& cfg, const MarketPath& path) {
  return filter_along<BayesFilter>(cfg, path);
}

ControlledPath run_filter_tildeP_path(const MarketConfig& cfg, const SimConfig& sim,
                                      const FeedbackFunction& strategy, const SimplexPoint& lambda0,
                                      DistressState z0, std::uint64_t path_index) {
  const CoefficientTable table(cfg);
  const int steps = sim.n_steps();
  const double dt = sim.step();
  const int n = cfg.n_stocks();
  PathRng rng(sim.seed, path_index, kControlStream);
  ControlledFilter filter(cfg, table, rng, lambda0.full(), z0, sim.scheme);

  ControlledPath out;
  out.filter.time.resize(static_cast<std::size_t>(steps) + 1);
  out.filter.distress.resize(out.filter.time.size());
  out.filter.probs.resize(steps + 1, cfg.n_regimes());
  out.filter.time[0] = 0.0;
  out.filter.distress[0] = z0;
  out.filter.probs.row(0) = filter.probabilities().transpose();
  for (int j = 0; j < steps; ++j) {
    const double t = j * dt;
    StockVector pi = strategy(t, filter.point(), filter.state());
    for (int i = 0; i < n; ++i) {
      if (filter.state().distressed(i)) pi(i) = 0.0;
    }
    filter.step(t, pi, dt);
    const auto jj = static_cast<std::size_t>(j) + 1;
    out.filter.time[jj] = (j + 1) * dt;
    out.filter.distress[jj] = filter.state();
    out.filter.probs.row(j + 1) = filter.probabilities().transpose();
  }
  out.eta_integral = filter.eta_integral();
  return out;
}

std::vector<ControlledPath> run_filter_tildeP(const MarketConfig& cfg, const SimConfig& sim,
                                              const FeedbackFunction& strategy) {
  std::vector<ControlledPath> paths;
  paths.reserve(static_cast<std::size_t>(sim.n_paths));
  for (int p = 0; p < sim.n_paths; ++p) {
    paths.push_back(run_filter_tildeP_path(cfg, sim, strategy, cfg.initial_filter,
                                           DistressState::none(cfg.n_stocks()), static_cast<std::uint64_t>(p)));
  }
  return paths;
}

}  // namespace contagion
