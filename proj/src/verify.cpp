#include "contagion/verify.hpp"

#include "contagion/csv.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <sstream>
#include <thread>

namespace contagion {

namespace {

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

StockVector masked(StockVector pi, DistressState z) {
  for (int i = 0; i < pi.size(); ++i) {
    if (z.distressed(i)) pi(i) = 0.0;
  }
  return pi;
}

double utility(const MarketConfig& cfg) { return std::pow(cfg.initial_wealth, cfg.gamma) / cfg.gamma; }

double tildeP_sample(const MarketConfig& cfg, const CoefficientTable& table, const SimConfig& sim,
                     const FeedbackFunction& strategy, const SimplexPoint& lambda0, DistressState z0, int path) {
  const int steps = sim.n_steps();
  const double dt = sim.step();
  PathRng rng(sim.seed, static_cast<std::uint64_t>(path), kControlStream);
  ControlledFilter filter(cfg, table, rng, lambda0.full(), z0, sim.scheme);
  for (int j = 0; j < steps; ++j) {
    const double t = j * dt;
    filter.step(t, masked(strategy(t, filter.point(), filter.state()), filter.state()), dt);
  }
  return utility(cfg) * std::exp(-cfg.gamma * filter.eta_integral());
}

double physical_sample(const MarketConfig& cfg, const CoefficientTable& table, const SimConfig& sim,
                       const FeedbackFunction& strategy, const SimplexPoint& lambda0, DistressState z0, int path) {
  const int steps = sim.n_steps();
  const double dt = sim.step();
  const int n = cfg.n_stocks();
  PathRng rng(sim.seed, static_cast<std::uint64_t>(path), kTruthStream);
  const RegimeVector prior = lambda0.full();
  TruthSimulator truth(cfg, table, rng, prior, z0, dt);
  ObservationFilter filter(cfg, table, prior, z0, sim.scheme);
  TruthIncrement inc;
  double log_wealth = std::log(cfg.initial_wealth);
  for (int j = 0; j < steps; ++j) {
    const double t = j * dt;
    const StockVector pi = masked(strategy(t, filter.point(), filter.state()), filter.state());
    truth.step(inc);
    const auto& st = table[inc.state];
    double drift = cfg.rate;
    double noise = 0.0;
    for (int i = 0; i < n; ++i) {
      if (pi(i) == 0.0) continue;
      const double vol = st.volatility(i);
      drift += pi(i) * (st.drift(i, inc.regime) + st.intensity(i, inc.regime) - cfg.rate) -
               0.5 * vol * vol * pi(i) * pi(i);
      noise += vol * pi(i) * inc.dW(i);
    }
    log_wealth += drift * dt + noise;
    filter.step(inc.dY, inc.distressed, dt);
  }
  if (!std::isfinite(log_wealth)) {
    throw NumericalError("wealth is not finite and positive on physical path " + std::to_string(path));
  }
  return std::exp(cfg.gamma * log_wealth) / cfg.gamma;
}

}  // namespace

Estimate summarize(const std::vector<double>& samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("summarize: need at least two samples");
  const double mean = pairwise_sum(samples.data(), n) / static_cast<double>(n);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) sq[i] = (samples[i] - mean) * (samples[i] - mean);
  const double var = pairwise_sum(sq.data(), n) / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

std::vector<double> parallel_paths(int n_paths, int threads, const std::function<double(int)>& f) {
  std::vector<double> out(static_cast<std::size_t>(n_paths));
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, n_paths));
  if (workers == 1) {
    for (int p = 0; p < n_paths; ++p) out[static_cast<std::size_t>(p)] = f(p);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int p = next++; p < n_paths; p = next++) {
        try {
          out[static_cast<std::size_t>(p)] = f(p);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n_paths;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<double> objective_samples_tildeP(const MarketConfig& cfg, const SimConfig& sim,
                                             const FeedbackFunction& strategy, const SimplexPoint& lambda0,
                                             DistressState z0, int threads) {
  const CoefficientTable table(cfg);
  return parallel_paths(sim.n_paths, threads,
                        [&](int p) { return tildeP_sample(cfg, table, sim, strategy, lambda0, z0, p); });
}

Estimate estimate_objective_tildeP(const MarketConfig& cfg, const SimConfig& sim, const FeedbackFunction& strategy,
                                   const SimplexPoint& lambda0, DistressState z0, int threads) {
  return summarize(objective_samples_tildeP(cfg, sim, strategy, lambda0, z0, threads));
}

std::vector<double> utility_samples_physical(const MarketConfig& cfg, const SimConfig& sim,
                                             const FeedbackFunction& strategy, const SimplexPoint& lambda0,
                                             DistressState z0, int threads) {
  const CoefficientTable table(cfg);
  return parallel_paths(sim.n_paths, threads,
                        [&](int p) { return physical_sample(cfg, table, sim, strategy, lambda0, z0, p); });
}

Estimate simulate_wealth_physical(const MarketConfig& cfg, const SimConfig& sim, const FeedbackFunction& strategy,
                                  const SimplexPoint& lambda0, DistressState z0, int threads) {
  return summarize(utility_samples_physical(cfg, sim, strategy, lambda0, z0, threads));
}

// ---------------------------------------------------------------------------
// Audit

AuditReport suboptimality_audit(const MarketConfig& cfg, const SimConfig& sim, const FeedbackStrategy& strategy,
                                const SimplexPoint& lambda0, DistressState z0, const std::vector<double>& scales,
                                int threads) {
  const std::vector<double> best = objective_samples_tildeP(cfg, sim, strategy.function(), lambda0, z0, threads);
  AuditReport report;
  report.optimal = summarize(best);
  report.pass = true;

  auto audit = [&](const std::string& label, const FeedbackFunction& rule) {
    const std::vector<double> other = objective_samples_tildeP(cfg, sim, rule, lambda0, z0, threads);
    std::vector<double> diff(other.size());
    for (std::size_t p = 0; p < other.size(); ++p) diff[p] = best[p] - other[p];
    AuditEntry e;
    e.label = label;
    e.objective = summarize(other);
    e.advantage = summarize(diff);
    e.pass = e.advantage.mean >= -3.0 * e.advantage.std_error;
    report.pass = report.pass && e.pass;
    report.entries.push_back(e);
  };
  for (double c : scales) audit("scale " + format_number(c), strategy.function(c));
  const StockVector fixed = strategy(0.0, lambda0, z0);
  audit("constant", [fixed](double, const SimplexPoint&, DistressState) { return fixed; });
  return report;
}

// ---------------------------------------------------------------------------
// Verification of the value function

VerificationReport verify_value(const MarketConfig& cfg, const SimConfig& sim, const FeedbackStrategy& strategy,
                                double lambda0, DistressState z0, double allowance_rate, int threads) {
  VerificationReport r;
  r.lambda0 = lambda0;
  r.z0 = z0;
  r.n_paths = sim.n_paths;
  r.dt = sim.step();
  r.allowance_rate = allowance_rate;
  r.allowance = allowance_rate * r.dt;
  r.pde_value = value_terminal_utility(cfg, strategy.surfaces(), lambda0, z0);
  const SimplexPoint start = SimplexPoint::scalar(lambda0);
  r.mc_tildeP = estimate_objective_tildeP(cfg, sim, strategy.function(), start, z0, threads);
  r.mc_physical = simulate_wealth_physical(cfg, sim, strategy.function(), start, z0, threads);
  const double slack = r.allowance + kRoundoff * std::abs(r.pde_value);
  r.pass_tildeP = std::abs(r.mc_tildeP.mean - r.pde_value) <= 3.0 * r.mc_tildeP.std_error + slack;
  r.pass_physical = std::abs(r.mc_physical.mean - r.pde_value) <= 3.0 * r.mc_physical.std_error + slack;
  const double combined = std::hypot(r.mc_tildeP.std_error, r.mc_physical.std_error);
  r.pass_consistency = std::abs(r.mc_tildeP.mean - r.mc_physical.mean) <= 3.0 * combined + slack;
  return r;
}

AllowanceCalibration calibrate_allowance(const MarketConfig& cfg, const SimConfig& sim,
                                         const FeedbackStrategy& strategy, double lambda0, DistressState z0,
                                         const std::vector<double>& dts, int threads) {
  if (dts.empty()) throw std::invalid_argument("calibrate_allowance: no time steps");
  AllowanceCalibration c;
  c.pde_value = value_terminal_utility(cfg, strategy.surfaces(), lambda0, z0);
  for (double dt : dts) {
    SimConfig s = sim;
    s.dt = dt;
    const Estimate e = estimate_objective_tildeP(cfg, s, strategy.function(), SimplexPoint::scalar(lambda0), z0, threads);
    c.dt.push_back(s.step());
    c.estimates.push_back(e);
    const double resolved = std::max(0.0, std::abs(e.mean - c.pde_value) - 3.0 * e.std_error);
    c.rate = std::max(c.rate, resolved / s.step());
  }
  return c;
}

std::string VerificationReport::csv_header() {
  return "lambda0,state,pde_value,tildeP_mean,tildeP_stderr,physical_mean,physical_stderr,n_paths,dt,"
         "allowance_rate,allowance,pass_tildeP,pass_physical,pass_consistency";
}

std::string VerificationReport::csv_row() const {
  return format_number(lambda0) + ',' + z0.str() + ',' +
         contagion::csv_row({pde_value, mc_tildeP.mean, mc_tildeP.std_error, mc_physical.mean, mc_physical.std_error,
                             static_cast<double>(n_paths), dt, allowance_rate, allowance}) +
         ',' + std::to_string(pass_tildeP) + ',' + std::to_string(pass_physical) + ',' +
         std::to_string(pass_consistency);
}

std::string VerificationReport::text() const {
  std::ostringstream os;
  os.precision(8);
  os << "state " << z0.str() << ", lambda0 = " << lambda0 << ", " << n_paths << " paths, dt = " << dt << '\n'
     << "  PDE value       " << pde_value << '\n'
     << "  P-tilde MC      " << mc_tildeP.mean << " +- " << mc_tildeP.std_error
     << (pass_tildeP ? "  pass" : "  FAIL") << '\n'
     << "  physical MC     " << mc_physical.mean << " +- " << mc_physical.std_error
     << (pass_physical ? "  pass" : "  FAIL") << '\n'
     << "  allowance C dt  " << allowance << " (C = " << allowance_rate << ")\n"
     << "  consistency     " << (pass_consistency ? "pass" : "FAIL") << '\n';
  return os.str();
}

}  // namespace contagion
