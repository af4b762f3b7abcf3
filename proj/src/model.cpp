#include "contagion/model.hpp"

#include <bit>
#include <cmath>
#include <sstream>

namespace contagion {

namespace {

void check_stock(int n, int i) {
  if (i < 0 || i >= n) {
    throw std::out_of_range("stock index " + std::to_string(i) + " out of range");
  }
}

void check_regime(int k_count, int k) {
  if (k < 0 || k >= k_count) {
    throw std::out_of_range("regime index " + std::to_string(k) + " out of range");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DistressState

DistressState::DistressState(int n_stocks, std::uint32_t bits) : n_(n_stocks), bits_(bits) {
  if (n_stocks < 0 || n_stocks > kMaxStocks) {
    throw std::out_of_range("DistressState: unsupported number of stocks");
  }
  if (n_stocks < 32 && (bits >> n_stocks) != 0u) {
    throw std::out_of_range("DistressState: bits beyond the number of stocks");
  }
}

DistressState DistressState::all(int n_stocks) {
  return {n_stocks, n_stocks == 0 ? 0u : (std::uint32_t{1} << n_stocks) - 1u};
}

DistressState DistressState::parse(const std::string& text) {
  std::uint32_t bits = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '1') {
      bits |= std::uint32_t{1} << i;
    } else if (text[i] != '0') {
      throw std::invalid_argument("distress state must be a string of 0/1, got '" + text + "'");
    }
  }
  return {static_cast<int>(text.size()), bits};
}

void DistressState::out_of_range(int i) {
  throw std::out_of_range("stock index " + std::to_string(i) + " out of range");
}

int DistressState::count() const { return std::popcount(bits_); }

std::string DistressState::str() const {
  std::string s(static_cast<std::size_t>(n_), '0');
  for (int i = 0; i < n_; ++i) {
    if ((bits_ >> i) & 1u) s[static_cast<std::size_t>(i)] = '1';
  }
  return s;
}

DistressState flip(DistressState z, int i) {
  if (z.distressed(i)) {
    throw std::invalid_argument("flip: stock " + std::to_string(i + 1) + " is already distressed in state " +
                                z.str());
  }
  return {z.size(), z.bits() | (std::uint32_t{1} << i)};
}

// ---------------------------------------------------------------------------
// SimplexPoint

SimplexPoint SimplexPoint::scalar(double lambda1) {
  RegimeVector c(1);
  c(0) = lambda1;
  return SimplexPoint(c);
}

SimplexPoint SimplexPoint::from_full(const RegimeVector& p) {
  return SimplexPoint(RegimeVector(p.head(p.size() - 1)));
}

RegimeVector SimplexPoint::full() const {
  RegimeVector p(coords.size() + 1);
  p.head(coords.size()) = coords;
  p(coords.size()) = 1.0 - coords.sum();
  return p;
}

bool SimplexPoint::in_closure(double tol) const {
  return (coords.array() >= -tol).all() && (coords.array() <= 1.0 + tol).all() &&
         coords.sum() <= 1.0 + tol;
}

bool SimplexPoint::in_interior() const {
  return (coords.array() > 0.0).all() && (coords.array() < 1.0).all() && coords.sum() < 1.0;
}

bool SimplexPoint::operator==(const SimplexPoint& other) const {
  return coords.size() == other.coords.size() && coords == other.coords;
}

// ---------------------------------------------------------------------------
// MarketConfig

MarketConfig::MarketConfig(int n_stocks, int n_regimes)
    : generator(Eigen::MatrixXd::Zero(n_regimes, n_regimes)),
      n_stocks_(n_stocks),
      n_regimes_(n_regimes) {
  if (n_stocks < 1 || n_stocks > kMaxStocks) throw ConfigError("n_stocks must be in [1, 16]");
  if (n_regimes < 1 || n_regimes > kMaxRegimes) throw ConfigError("n_regimes must be in [1, 8]");
  const auto states = static_cast<std::size_t>(n_states());
  drift_.assign(states * n_stocks * n_regimes, 0.0);
  intensity_.assign(states * n_stocks * n_regimes, 0.0);
  volatility_.assign(states * n_stocks, 0.0);
  RegimeVector p = RegimeVector::Constant(n_regimes, 1.0 / n_regimes);
  initial_filter = SimplexPoint::from_full(p);
}

std::size_t MarketConfig::regime_index(int i, int k, DistressState z) const {
  check_stock(n_stocks_, i);
  check_regime(n_regimes_, k);
  if (z.size() != n_stocks_) throw std::out_of_range("distress state has the wrong length");
  return (static_cast<std::size_t>(z.bits()) * n_stocks_ + i) * n_regimes_ + k;
}

std::size_t MarketConfig::stock_index(int i, DistressState z) const {
  check_stock(n_stocks_, i);
  if (z.size() != n_stocks_) throw std::out_of_range("distress state has the wrong length");
  return static_cast<std::size_t>(z.bits()) * n_stocks_ + i;
}

double MarketConfig::drift(int i, int k, DistressState z) const { return drift_[regime_index(i, k, z)]; }
double MarketConfig::intensity(int i, int k, DistressState z) const {
  return intensity_[regime_index(i, k, z)];
}
double MarketConfig::volatility(int i, DistressState z) const { return volatility_[stock_index(i, z)]; }

void MarketConfig::set_drift(int i, int k, DistressState z, double v) { drift_[regime_index(i, k, z)] = v; }
void MarketConfig::set_intensity(int i, int k, DistressState z, double v) {
  intensity_[regime_index(i, k, z)] = v;
}
void MarketConfig::set_volatility(int i, DistressState z, double v) { volatility_[stock_index(i, z)] = v; }

void MarketConfig::set_drift(int i, int k, double v) {
  for (int s = 0; s < n_states(); ++s) set_drift(i, k, DistressState(n_stocks_, s), v);
}
void MarketConfig::set_intensity(int i, int k, double v) {
  for (int s = 0; s < n_states(); ++s) set_intensity(i, k, DistressState(n_stocks_, s), v);
}
void MarketConfig::set_volatility(int i, double v) {
  for (int s = 0; s < n_states(); ++s) set_volatility(i, DistressState(n_stocks_, s), v);
}

bool MarketConfig::operator==(const MarketConfig& other) const {
  const bool same_generator = generator.rows() == other.generator.rows() &&
                              generator.cols() == other.generator.cols() && generator == other.generator;
  return n_stocks_ == other.n_stocks_ && n_regimes_ == other.n_regimes_ && rate == other.rate &&
         gamma == other.gamma && horizon == other.horizon && initial_wealth == other.initial_wealth &&
         same_generator && initial_filter == other.initial_filter && drift_ == other.drift_ &&
         intensity_ == other.intensity_ && volatility_ == other.volatility_;
}

void MarketConfig::validate() const {
  if (n_stocks_ < 1) throw ConfigError("market has no stocks");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(rate >= 0.0)) throw ConfigError("rate must be nonnegative");
  if (!(initial_wealth > 0.0)) throw ConfigError("initial_wealth must be positive");
  if (generator.rows() != n_regimes_ || generator.cols() != n_regimes_) {
    throw ConfigError("generator must be K x K");
  }
  for (int l = 0; l < n_regimes_; ++l) {
    for (int k = 0; k < n_regimes_; ++k) {
      if (l != k && generator(l, k) < 0.0) {
        throw ConfigError("generator off-diagonal entries must be nonnegative");
      }
    }
    if (std::abs(generator.row(l).sum()) > 1e-12) throw ConfigError("generator rows must sum to zero");
  }
  for (double h : intensity_) {
    if (!(h > 0.0)) throw ConfigError("every intensity must be strictly positive");
  }
  for (double v : volatility_) {
    if (!(v > 0.0)) throw ConfigError("every volatility must be strictly positive");
  }
  for (double b : drift_) {
    if (!std::isfinite(b)) throw ConfigError("drift entries must be finite");
  }
  if (initial_filter.dim() != n_regimes_ - 1 || !initial_filter.in_closure()) {
    throw ConfigError("initial_filter must be a point of the (K-1)-simplex");
  }
}

Eigen::MatrixXd two_regime_generator(double rate_1_to_2, double rate_2_to_1) {
  Eigen::MatrixXd q(2, 2);
  q << -rate_1_to_2, rate_1_to_2, rate_2_to_1, -rate_2_to_1;
  return q;
}

MarketConfig benchmark_config() {
  MarketConfig cfg(2, 2);
  cfg.set_drift(0, 0, 1.0);
  cfg.set_drift(0, 1, 0.5);
  cfg.set_drift(1, 0, 1.2);
  cfg.set_drift(1, 1, 0.4);
  cfg.set_intensity(0, 0, 1.0);
  cfg.set_intensity(0, 1, 0.1);
  cfg.set_intensity(1, 0, 1.0);
  cfg.set_intensity(1, 1, 0.1);
  cfg.set_volatility(0, 0.4);
  cfg.set_volatility(1, 0.6);
  cfg.gamma = 0.3;
  cfg.rate = 0.0;
  cfg.horizon = 3.0;
  cfg.initial_wealth = 1.0;
  cfg.generator = two_regime_generator(0.5, 0.4);
  cfg.initial_filter = SimplexPoint::scalar(0.5);
  return cfg;
}

// ---------------------------------------------------------------------------
// Coefficients

double log_drift(const MarketConfig& cfg, int i, int k, DistressState z) {
  const double vol = cfg.volatility(i, z);
  return cfg.drift(i, k, z) + cfg.intensity(i, k, z) - 0.5 * vol * vol;
}

RegimeVector intensity_by_regime(const MarketConfig& cfg, int i, DistressState z) {
  RegimeVector h(cfg.n_regimes());
  for (int k = 0; k < cfg.n_regimes(); ++k) h(k) = cfg.intensity(i, k, z);
  return h;
}

double tilde_intensity(const MarketConfig& cfg, double /*t*/, const SimplexPoint& lambda, int i,
                       DistressState z) {
  return tilde_interp(intensity_by_regime(cfg, i, z), lambda);
}

double tilde_drift(const MarketConfig& cfg, double /*t*/, const SimplexPoint& lambda, int i,
                   DistressState z) {
  RegimeVector b(cfg.n_regimes());
  for (int k = 0; k < cfg.n_regimes(); ++k) b(k) = cfg.drift(i, k, z);
  return tilde_interp(b, lambda);
}

StockVector volatilities(const MarketConfig& cfg, DistressState z) {
  StockVector v(cfg.n_stocks());
  for (int i = 0; i < cfg.n_stocks(); ++i) v(i) = cfg.volatility(i, z);
  return v;
}

FilterDiffusion sigma_matrix(const MarketConfig& cfg, double /*t*/, const SimplexPoint& lambda,
                             DistressState z) {
  const int K = cfg.n_regimes();
  const int N = cfg.n_stocks();
  FilterDiffusion s(K - 1, N);
  RegimeVector mu(K);
  for (int i = 0; i < N; ++i) {
    for (int k = 0; k < K; ++k) mu(k) = log_drift(cfg, i, k, z);
    const double mu_tilde = tilde_interp(mu, lambda);
    const double vol = cfg.volatility(i, z);
    for (int k = 0; k < K - 1; ++k) s(k, i) = lambda.coords(k) * (mu(k) - mu_tilde) / vol;
  }
  return s;
}

FilterDiffusion masked_sigma(const MarketConfig& cfg, double t, const SimplexPoint& lambda,
                             DistressState z) {
  FilterDiffusion s = sigma_matrix(cfg, t, lambda, z);
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    if (z.distressed(i)) s.col(i).setZero();
  }
  return s;
}

StockVector gamma_vec(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z) {
  StockVector g(cfg.n_stocks());
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    g(i) = cfg.rate - tilde_drift(cfg, t, lambda, i, z) - tilde_intensity(cfg, t, lambda, i, z);
  }
  return g;
}

RegimeVector beta_varpi(const MarketConfig& cfg, double /*t*/, const SimplexPoint& lambda) {
  const int K = cfg.n_regimes();
  RegimeVector beta(K - 1);
  for (int k = 0; k < K - 1; ++k) {
    double v = cfg.generator(K - 1, k);
    for (int j = 0; j < K - 1; ++j) v += (cfg.generator(j, k) - cfg.generator(K - 1, k)) * lambda.coords(j);
    beta(k) = v;
  }
  return beta;
}

RegimeVector jump_compensator(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z) {
  const int K = cfg.n_regimes();
  RegimeVector out = RegimeVector::Zero(K - 1);
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    if (z.distressed(i)) continue;
    const double ht = tilde_intensity(cfg, t, lambda, i, z);
    for (int k = 0; k < K - 1; ++k) out(k) -= lambda.coords(k) * (cfg.intensity(i, k, z) - ht);
  }
  return out;
}

ThetaRho theta_rho(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z,
                   JumpDrift jump_drift) {
  const int N = cfg.n_stocks();
  const double g = cfg.gamma;
  const double ratio = g / (1.0 - g);

  const FilterDiffusion sz = masked_sigma(cfg, t, lambda, z);
  const StockVector gam = gamma_vec(cfg, t, lambda, z);
  const StockVector vol = volatilities(cfg, z);

  StockVector gam_over_vol(N);
  double quad = 0.0;
  double live_intensity = 0.0;
  for (int i = 0; i < N; ++i) {
    const bool live = z.alive(i);
    gam_over_vol(i) = live ? gam(i) / vol(i) : 0.0;
    quad += gam_over_vol(i) * gam_over_vol(i);
    if (live) live_intensity += tilde_intensity(cfg, t, lambda, i, z);
  }

  ThetaRho out;
  out.theta = beta_varpi(cfg, t, lambda) - ratio * (sz * gam_over_vol);
  if (jump_drift == JumpDrift::compensated) out.theta += jump_compensator(cfg, t, lambda, z);
  out.rho = g * cfg.rate - live_intensity + 0.5 * ratio * quad;
  return out;
}

SimplexPoint jump_revision(const MarketConfig& cfg, double t, const SimplexPoint& lambda, int i,
                           DistressState z) {
  if (z.distressed(i)) {
    throw std::invalid_argument("jump_revision: stock " + std::to_string(i + 1) + " is already distressed");
  }
  const RegimeVector h = intensity_by_regime(cfg, i, z);
  const double h_tilde = tilde_intensity(cfg, t, lambda, i, z);
  return SimplexPoint(RegimeVector(lambda.coords.cwiseProduct(h.head(h.size() - 1)) / h_tilde));
}

double eta_tilde(const MarketConfig& cfg, double t, const SimplexPoint& lambda, DistressState z,
                 const StockVector& pi) {
  const StockVector gam = gamma_vec(cfg, t, lambda, z);
  const StockVector vol = volatilities(cfg, z);
  double linear = 0.0;
  double quad = 0.0;
  for (int i = 0; i < cfg.n_stocks(); ++i) {
    if (z.distressed(i)) continue;
    linear += pi(i) * gam(i);
    quad += pi(i) * pi(i) * vol(i) * vol(i);
  }
  return -cfg.rate + linear + 0.5 * (1.0 - cfg.gamma) * quad;
}

CoefficientTable::CoefficientTable(const MarketConfig& cfg)
    : n_stocks_(cfg.n_stocks()), n_regimes_(cfg.n_regimes()) {
  states_.reserve(static_cast<std::size_t>(cfg.n_states()));
  for (int s = 0; s < cfg.n_states(); ++s) {
    const DistressState z(n_stocks_, static_cast<std::uint32_t>(s));
    State st;
    st.drift.resize(n_stocks_, n_regimes_);
    st.intensity.resize(n_stocks_, n_regimes_);
    st.log_drift.resize(n_stocks_, n_regimes_);
    st.volatility.resize(n_stocks_);
    for (int i = 0; i < n_stocks_; ++i) {
      st.volatility(i) = cfg.volatility(i, z);
      for (int k = 0; k < n_regimes_; ++k) {
        st.drift(i, k) = cfg.drift(i, k, z);
        st.intensity(i, k) = cfg.intensity(i, k, z);
        st.log_drift(i, k) = log_drift(cfg, i, k, z);
      }
    }
    states_.push_back(std::move(st));
  }
}

}  // namespace contagion
