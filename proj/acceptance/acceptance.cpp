#include "contagion/experiment.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

using namespace contagion;

namespace {

// Tolerances of the acceptance criteria.
constexpr double kClosedFormTol = 1e-6;
constexpr double kClosedFormSeconds = 10.0;
constexpr double kTruncationSlack = 1.05;
constexpr double kTruncationFinal = 1e-3;
constexpr double kVerifySeconds = 300.0;
constexpr double kFilterSup = 0.02;
constexpr double kHalvingLow = 1.4, kHalvingHigh = 2.6;
constexpr double kReductionTol = 1e-10;
constexpr double kArgmaxTol = 1e-10;
constexpr double kSigmas = 3.0;

const DistressState kNone(2, 0u);
const DistressState kBoth(2, 3u);

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

std::string config_path(const std::string& name) { return std::string(CONTAGION_SOURCE_DIR) + "/configs/" + name; }

struct Running {
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  void add(double x) {
    sum += x;
    sum2 += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double se() const { return std::sqrt((sum2 / n - mean() * mean()) / (n - 1)); }
  bool centered(double target = 0.0) const { return std::abs(mean() - target) <= kSigmas * se(); }
  std::string text(double target = 0.0) const {
    return fmt(mean() - target) + " +- " + fmt(se());
  }
};

// ---------------------------------------------------------------------------

Outcome closed_form(std::ostream&) {
  MarketConfig cfg = benchmark_config();
  cfg.rate = 0.05;
  Grid grid;
  grid.n_space = 201;
  grid.n_time = 3000;
  SolveOptions opts;
  opts.analytic_terminal = false;
  const auto start = std::chrono::steady_clock::now();
  const ValueSurface s = solve_state(cfg, grid, kBoth, {}, opts);
  const double elapsed = seconds_since(start);
  double err = 0.0;
  for (int j = 0; j < grid.n_time; ++j) {
    const double exact = cfg.gamma * cfg.rate * (cfg.horizon - s.time(j));
    err = std::max(err, (s.w.row(j).array() - exact).abs().maxCoeff());
  }
  return {err < kClosedFormTol && elapsed < kClosedFormSeconds,
          "max error " + fmt(err) + " (< " + fmt(kClosedFormTol) + "), " + fmt(elapsed) + " s (< " +
              fmt(kClosedFormSeconds) + ")"};
}

Outcome containment(std::ostream& log) {
  const ExperimentConfig c = load_experiment(config_path("benchmark.json"));
  const SurfaceMap surfaces = recursive_solve(c.market, c.grid, c.solve);
  bool pass = true;
  long outside = 0;
  for (const auto& [z, s] : surfaces) {
    const double lo = s->bounds.lower(c.market.horizon), hi = s->bounds.upper(c.market.horizon);
    const long bad = ((s->w.array() < lo) || (s->w.array() > hi)).count();
    outside += bad;
    pass = pass && bad == 0;
    log << "  state " << z.str() << ": w in [" << fmt(s->w.minCoeff()) << ", " << fmt(s->w.maxCoeff())
        << "], envelope [" << fmt(lo) << ", " << fmt(hi) << "]\n";
  }
  return {pass, std::to_string(outside) + " nodes outside the envelopes in " + std::to_string(surfaces.size()) +
                    " states"};
}

Outcome truncation(std::ostream&) {
  const ExperimentConfig c = load_experiment(config_path("benchmark.json"));
  const std::vector<double> ms{1e1, 1e2, 1e3, 1e4};
  const std::vector<double> d = stampacchia_convergence(c.market, c.grid, ms, c.solve);
  bool pass = d.back() < kTruncationFinal;
  std::string detail = "distances";
  for (std::size_t q = 0; q < d.size(); ++q) {
    detail += " " + fmt(d[q]);
    if (q > 0) pass = pass && d[q] <= kTruncationSlack * d[q - 1];
  }
  return {pass, detail + " (nonincreasing within 5%, last < " + fmt(kTruncationFinal) + ")"};
}

Outcome verification(std::ostream& log) {
  const ExperimentConfig c = load_experiment(config_path("benchmark.json"));
  const auto start = std::chrono::steady_clock::now();
  const FeedbackStrategy strategy(c.market, recursive_solve(c.market, c.grid, c.solve));
  bool pass = true;
  for (double l : c.verify.lambdas) {
    const VerificationReport r = verify_value(c.market, c.sim, strategy, l, c.verify.state, c.verify.allowance_rate, 0);
    pass = pass && r.pass();
    std::istringstream text(r.text());
    for (std::string line; std::getline(text, line);) log << "  " << line << '\n';
  }
  const double elapsed = seconds_since(start);
  pass = pass && elapsed < kVerifySeconds;
  return {pass, std::to_string(c.sim.n_paths) + " paths, dt " + fmt(c.sim.step()) + ", C " +
                    fmt(c.verify.allowance_rate) + ", " + fmt(elapsed) + " s (< " + fmt(kVerifySeconds) + ")"};
}

Outcome audit(std::ostream& log) {
  const ExperimentConfig c = load_experiment(config_path("benchmark.json"));
  const FeedbackStrategy strategy(c.market, recursive_solve(c.market, c.grid, c.solve));
  SimConfig sim = c.sim;
  sim.dt = 4e-3;
  const AuditReport r = suboptimality_audit(c.market, sim, strategy, SimplexPoint::scalar(c.verify.audit_lambda),
                                            c.verify.state, c.verify.audit_scales, 0);
  log << "  optimal " << fmt(r.optimal.mean) << " +- " << fmt(r.optimal.std_error) << '\n';
  for (const AuditEntry& e : r.entries) {
    log << "  " << e.label << ": advantage " << fmt(e.advantage.mean) << " +- " << fmt(e.advantage.std_error)
        << (e.pass ? "" : "  FAIL") << '\n';
  }
  return {r.pass, std::to_string(sim.n_paths) + " common paths, dt " + fmt(sim.step())};
}

/// Every second grid point of a path; Brownian increments are summed pairwise.
MarketPath coarsen(const MarketPath& fine) {
  const int n = static_cast<int>(fine.time.size() - 1) / 2;
  MarketPath c;
  c.brownian.resize(n, fine.brownian.cols());
  c.log_price.resize(n + 1, fine.log_price.cols());
  for (int j = 0; j <= n; ++j) {
    c.time.push_back(fine.time[2 * j]);
    c.regime.push_back(fine.regime[2 * j]);
    c.distress.push_back(fine.distress[2 * j]);
    c.log_price.row(j) = fine.log_price.row(2 * j);
  }
  for (int j = 0; j < n; ++j) c.brownian.row(j) = fine.brownian.row(2 * j) + fine.brownian.row(2 * j + 1);
  c.distress_time = fine.distress_time;
  return c;
}

Outcome filter_checks(std::ostream& log) {
  const MarketConfig cfg = benchmark_config();
  bool pass = true;

  // oracle discrepancy at dt, 2 dt and 4 dt on common paths
  SimConfig sim;
  sim.dt = 5e-5;
  sim.horizon = cfg.horizon;
  sim.seed = 7;
  const int oracle_paths = 20;
  double mean_sup[3] = {0.0, 0.0, 0.0}, worst_sup[3] = {0.0, 0.0, 0.0};
  for (int p = 0; p < oracle_paths; ++p) {
    MarketPath path = simulate_truth_path(cfg, sim, static_cast<std::uint64_t>(p));
    for (int level = 0; level < 3; ++level) {
      const double d = (run_filter(cfg, path).probs - hmm_oracle_filter(cfg, path).probs).cwiseAbs().maxCoeff();
      mean_sup[level] += d / oracle_paths;
      worst_sup[level] = std::max(worst_sup[level], d);
      if (level < 2) path = coarsen(path);
    }
  }
  const bool sup_ok = worst_sup[1] < kFilterSup;
  const double r1 = mean_sup[1] / mean_sup[0], r2 = mean_sup[2] / mean_sup[1];
  const bool halves = r1 > kHalvingLow && r1 < kHalvingHigh && r2 > kHalvingLow && r2 < kHalvingHigh;
  pass = pass && sup_ok && halves;
  log << "  sup discrepancy at dt 1e-4 over " << oracle_paths << " paths: max " << fmt(worst_sup[1]) << " (< "
      << fmt(kFilterSup) << ")" << (sup_ok ? "" : "  FAIL") << '\n'
      << "  mean sup at dt 2e-4, 1e-4, 5e-5: " << fmt(mean_sup[2]) << ", " << fmt(mean_sup[1]) << ", "
      << fmt(mean_sup[0]) << "; ratios " << fmt(r2) << ", " << fmt(r1) << (halves ? "" : "  FAIL") << '\n';

  // innovations under P and unbiasedness of the filter
  const int n_paths = 100000;
  const double dt = 2e-3;
  const int steps = static_cast<int>(std::lround(cfg.horizon / dt));
  const int n = cfg.n_stocks();
  const CoefficientTable table(cfg);
  const RegimeVector prior = cfg.initial_filter.full();
  Running regime_gap, filter_mean, price[2], distress[2];
  for (int p = 0; p < n_paths; ++p) {
    PathRng rng(11, static_cast<std::uint64_t>(p), kTruthStream);
    TruthSimulator truth(cfg, table, rng, prior, kNone, dt);
    ObservationFilter filter(cfg, table, prior, kNone);
    TruthIncrement inc;
    double innovation[2] = {0.0, 0.0}, hit_minus_hazard[2] = {0.0, 0.0};
    for (int j = 0; j < steps; ++j) {
      const RegimeVector q = filter.probabilities();
      const DistressState z = filter.state();
      truth.step(inc);
      for (int i = 0; i < n; ++i) {
        double mu = 0.0, h = 0.0;
        for (int k = 0; k < 2; ++k) {
          mu += q(k) * log_drift(cfg, i, k, z);
          h += q(k) * cfg.intensity(i, k, z);
        }
        innovation[i] += (inc.dY(i) - mu * dt) / cfg.volatility(i, z);
        if (z.alive(i)) hit_minus_hazard[i] -= h * dt;
        if (inc.distressed == i) hit_minus_hazard[i] += 1.0;
      }
      filter.step(inc.dY, inc.distressed, dt);
    }
    const double p1 = filter.probabilities()(0);
    filter_mean.add(p1);
    regime_gap.add(p1 - (truth.regime() == 0 ? 1.0 : 0.0));
    for (int i = 0; i < n; ++i) {
      price[i].add(innovation[i]);
      distress[i].add(hit_minus_hazard[i]);
    }
  }
  const double a = -cfg.generator(0, 0), b = -cfg.generator(1, 1);
  const double stationary = b / (a + b);
  const double law = stationary + (prior(0) - stationary) * std::exp(-(a + b) * cfg.horizon);
  struct Check {
    std::string name;
    const Running& stat;
    double target;
  };
  const std::vector<Check> checks{{"E p_1(T) - P(X_T = e_1)", filter_mean, law},
                                  {"E [p_1(T) - 1{X_T = e_1}]", regime_gap, 0.0},
                                  {"price innovation of stock 1", price[0], 0.0},
                                  {"price innovation of stock 2", price[1], 0.0},
                                  {"distress innovation of stock 1", distress[0], 0.0},
                                  {"distress innovation of stock 2", distress[1], 0.0}};
  for (const Check& c : checks) {
    const bool ok = c.stat.centered(c.target);
    pass = pass && ok;
    log << "  " << c.name << ": " << c.stat.text(c.target) << (ok ? "" : "  FAIL") << '\n';
  }
  return {pass, "oracle and " + std::to_string(n_paths) + " path martingale checks at dt " + fmt(dt)};
}

Outcome sweeps(std::ostream& log) {
  bool pass = true;
  for (const char* file : {"sweep_intensity.json", "sweep_gamma.json", "sweep_volatility.json"}) {
    const ExperimentConfig c = load_experiment(config_path(file));
    const SweepResult r = run_sweep(c.market, c.grid, c.solve, *c.sweep);
    for (const PropertyCheck& p : sweep_properties(r)) {
      pass = pass && p.pass;
      log << "  " << (p.pass ? "holds " : "FAILS ") << c.sweep->parameter << ": " << p.name << " (" << p.detail
          << ")\n";
    }
  }
  return {pass, "qualitative properties of the strategy tables at t = 0"};
}

MarketConfig homogeneous(int n) {
  MarketConfig cfg(n, 2);
  for (int i = 0; i < n; ++i) {
    cfg.set_drift(i, 0, 0.9);
    cfg.set_drift(i, 1, 0.4);
    cfg.set_intensity(i, 0, 0.8);
    cfg.set_intensity(i, 1, 0.2);
    cfg.set_volatility(i, 0.5);
  }
  cfg.gamma = 0.3;
  cfg.horizon = 1.0;
  cfg.generator = two_regime_generator(0.5, 0.4);
  cfg.initial_filter = SimplexPoint::scalar(0.5);
  return cfg;
}

Outcome reduction(std::ostream& log) {
  MarketConfig grouped = homogeneous(4);
  for (int i = 2; i < 4; ++i) {
    grouped.set_drift(i, 0, 1.1);
    grouped.set_volatility(i, 0.3);
  }
  const int two_groups = reduce_states(grouped, {0, 0, 1, 1}).solve_count;
  const int single_group = reduce_states(homogeneous(4), {0, 0, 0, 0}).solve_count;
  const int singletons = reduce_states(grouped, {0, 1, 2, 3}).solve_count;

  const MarketConfig cfg = homogeneous(3);
  Grid grid;
  grid.n_space = 101;
  grid.n_time = 1000;
  const StateReduction red = reduce_states(cfg, {0, 0, 0});
  const SurfaceMap full = recursive_solve(cfg, grid, {});
  const SurfaceMap reduced = recursive_solve(cfg, grid, {}, &red);
  double worst = 0.0;
  for (const auto& [z, s] : full) worst = std::max(worst, (s->w - reduced.at(z)->w).cwiseAbs().maxCoeff());

  log << "  N = 4: two groups " << two_groups << " (9), one group " << single_group << " (5), singletons "
      << singletons << " (16)\n";
  const bool pass = two_groups == 9 && single_group == 5 && singletons == 16 && red.solve_count == 4 &&
                    worst < kReductionTol;
  return {pass, "counts 9/5/16, reduced vs full solve for N = 3: " + fmt(worst) + " (< " + fmt(kReductionTol) + ")"};
}

Outcome argmax(std::ostream&) {
  const ExperimentConfig c = load_experiment(config_path("benchmark.json"));
  const FeedbackStrategy strategy(c.market, recursive_solve(c.market, c.grid, c.solve));
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0), wide(-20.0, 20.0);
  double worst = -1e300;
  for (int s = 0; s < 1000; ++s) {
    const double t = c.market.horizon * unit(gen);
    const double l = unit(gen);
    const DistressState z(2, static_cast<std::uint32_t>(gen() % 4));
    RegimeVector g(1);
    g(0) = strategy.gradient(t, l, z);
    for (int q = 0; q < 1000; ++q) {
      StockVector pi(2);
      pi << wide(gen), wide(gen);
      const PhiValues v = phi_and_phistar(c.market, g, t, SimplexPoint::scalar(l), z, pi);
      worst = std::max(worst, v.phi - v.phi_star);
    }
  }
  return {worst <= kArgmaxTol, "max Phi - Phi* over 1e6 draws " + fmt(worst) + " (<= " + fmt(kArgmaxTol) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria of the contagion solver"};
  std::vector<int> only;
  app.add_option("criteria", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome(std::ostream&)>> criteria{
      closed_form, containment, truncation, verification, audit, filter_checks, sweeps, reduction, argmax};
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (int k = 1; k <= 9; ++k) {
    if (!selected.empty() && !selected.count(k)) continue;
    std::ostringstream details;
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(k - 1)](details);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << '\n'
              << details.str() << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
