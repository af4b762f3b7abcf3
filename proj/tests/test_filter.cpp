#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "contagion/filter.hpp"

#include <cmath>

using namespace contagion;
using doctest::Approx;

namespace {

MarketConfig single_regime(double h) {
  MarketConfig cfg(1, 1);
  cfg.set_drift(0, 0, 0.05);
  cfg.set_intensity(0, 0, h);
  cfg.set_volatility(0, 0.2);
  cfg.generator = Eigen::MatrixXd::Zero(1, 1);
  cfg.gamma = 0.5;
  cfg.horizon = 1.0;
  cfg.initial_filter = SimplexPoint(RegimeVector(0));
  return cfg;
}

/// Benchmark with regime-independent drift and intensity: observations carry no information.
MarketConfig uninformative(double p0) {
  MarketConfig cfg = benchmark_config();
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      cfg.set_drift(i, k, 0.3);
      cfg.set_intensity(i, k, 0.2);
    }
  }
  cfg.initial_filter = SimplexPoint::scalar(p0);
  return cfg;
}

double relaxation(double p0, double t) { return 4.0 / 9.0 + (p0 - 4.0 / 9.0) * std::exp(-0.9 * t); }

struct MeanVar {
  double sum = 0.0, sum2 = 0.0;
  int n = 0;
  void add(double x) {
    sum += x;
    sum2 += x * x;
    ++n;
  }
  double mean() const { return sum / n; }
  double stderr_() const { return std::sqrt((sum2 / n - mean() * mean()) / (n - 1)); }
};

}  // namespace

TEST_CASE("no distress without intensity") {
  MarketConfig cfg = benchmark_config();
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) cfg.set_intensity(i, k, 0.0);
  }
  SimConfig sim;
  sim.dt = 0.01;
  sim.horizon = 3.0;
  for (std::uint64_t p = 0; p < 200; ++p) {
    const MarketPath path = simulate_truth_path(cfg, sim, p);
    REQUIRE(path.distress.back().count() == 0);
    REQUIRE(std::isinf(path.distress_time[0]));
  }
}

TEST_CASE("exponential survival law") {
  const MarketConfig cfg = single_regime(0.5);
  const CoefficientTable table(cfg);
  MeanVar survived;
  const double dt = 0.01;
  for (std::uint64_t p = 0; p < 100000; ++p) {
    PathRng rng(17, p);
    TruthSimulator truth(cfg, table, rng, RegimeVector::Ones(1), DistressState::none(1), dt);
    TruthIncrement inc;
    for (int j = 0; j < 100; ++j) truth.step(inc);
    survived.add(truth.state().distressed(0) ? 0.0 : 1.0);
  }
  CHECK(std::abs(survived.mean() - std::exp(-0.5)) < 3.0 * survived.stderr_());
}

TEST_CASE("chain occupation approaches the stationary law") {
  MarketConfig cfg = benchmark_config();
  cfg.horizon = 40.0;
  const CoefficientTable table(cfg);
  MeanVar occupation;
  const double dt = 0.05;
  for (std::uint64_t p = 0; p < 2000; ++p) {
    PathRng rng(23, p);
    TruthSimulator truth(cfg, table, rng, cfg.initial_filter.full(), DistressState::none(2), dt);
    TruthIncrement inc;
    int in_first = 0;
    const int steps = 800;
    for (int j = 0; j < steps; ++j) {
      truth.step(inc);
      in_first += truth.regime() == 0;
    }
    occupation.add(double(in_first) / steps);
  }
  // time average from X(0) ~ (0.5, 0.5): bias (0.5 - 4/9)(1 - e^{-36}) / 36
  const double expected = 4.0 / 9.0 + (0.5 - 4.0 / 9.0) / (0.9 * 40.0);
  CHECK(std::abs(occupation.mean() - expected) < 3.0 * occupation.stderr_());
}

TEST_CASE("truth path invariants") {
  const MarketConfig cfg = benchmark_config();
  SimConfig sim;
  sim.dt = 0.01;
  sim.horizon = 3.0;
  int distress_seen = 0;
  for (std::uint64_t p = 0; p < 300; ++p) {
    const MarketPath path = simulate_truth_path(cfg, sim, p);
    for (std::size_t j = 1; j < path.distress.size(); ++j) {
      const std::uint32_t before = path.distress[j - 1].bits();
      const std::uint32_t after = path.distress[j].bits();
      REQUIRE((before & ~after) == 0u);
      REQUIRE(std::popcount(after) - std::popcount(before) <= 1);
    }
    for (int i = 0; i < 2; ++i) {
      const double tau = path.distress_time[static_cast<std::size_t>(i)];
      if (std::isfinite(tau)) {
        ++distress_seen;
        std::size_t j = 0;
        while (!path.distress[j].distressed(i)) ++j;
        REQUIRE(j > 0);
        // a crossing deferred to the next step is stamped with that step's start
        REQUIRE(tau >= path.time[j - 1] - 1e-12);
        REQUIRE(tau <= path.time[j] + 1e-12);
      }
    }
  }
  CHECK(distress_seen > 100);
}

TEST_CASE("uninformative observations leave the prior untouched") {
  MarketConfig cfg = uninformative(0.3);
  cfg.generator.setZero();
  SimConfig sim;
  sim.dt = 0.01;
  sim.horizon = 3.0;
  for (std::uint64_t p = 0; p < 5; ++p) {
    const MarketPath path = simulate_truth_path(cfg, sim, p);
    const FilterPath f = run_filter(cfg, path);
    const FilterPath b = hmm_oracle_filter(cfg, path);
    CHECK((f.probs.col(0).array() - 0.3).abs().maxCoeff() < 1e-14);
    CHECK((b.probs.col(0).array() - 0.3).abs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("uninformative observations: deterministic relaxation") {
  const MarketConfig cfg = uninformative(0.9);
  for (double dt : {0.01, 0.005}) {
    SimConfig sim;
    sim.dt = dt;
    sim.horizon = 3.0;
    const MarketPath path = simulate_truth_path(cfg, sim, 0);
    const FilterPath f = run_filter(cfg, path);
    double err = 0.0;
    for (std::size_t j = 0; j < f.time.size(); ++j) {
      err = std::max(err, std::abs(f.probs(static_cast<Eigen::Index>(j), 0) - relaxation(0.9, f.time[j])));
    }
    // Euler on a linear ODE: global error below the first-order bound
    CHECK(err < 0.5 * dt);
    CHECK(err > 0.0);
  }
}

TEST_CASE("observation filter tracks the Bayes oracle") {
  const MarketConfig cfg = benchmark_config();
  SimConfig sim;
  sim.dt = 1e-4;
  sim.horizon = 3.0;
  sim.seed = 99;
  for (std::uint64_t p = 0; p < 5; ++p) {
    const MarketPath path = simulate_truth_path(cfg, sim, p);
    const FilterPath f = run_filter(cfg, path);
    const FilterPath b = hmm_oracle_filter(cfg, path);
    CHECK((f.probs - b.probs).cwiseAbs().maxCoeff() < 0.02);
    for (Eigen::Index j = 0; j < f.probs.rows(); ++j) {
      REQUIRE((f.probs.row(j).array() > 0.0).all());
      REQUIRE((f.probs.row(j).array() < 1.0).all());
      REQUIRE(std::abs(f.probs.row(j).sum() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("Bayes update is monotone in the signal") {
  const MarketConfig cfg = benchmark_config();
  const CoefficientTable table(cfg);
  double previous = 0.0;
  for (double snr : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    BayesFilter bayes(cfg, table, cfg.initial_filter.full(), DistressState::none(2));
    StockVector dY(2);
    // regime 1 has the larger log drift in both stocks
    dY << snr * 0.01, snr * 0.01;
    bayes.step(dY, -1, 0.01);
    CHECK(bayes.probabilities()(0) > previous);
    previous = bayes.probabilities()(0);
  }
}

TEST_CASE("distress applies the jump revision") {
  const MarketConfig cfg = benchmark_config();
  const CoefficientTable table(cfg);
  MarketConfig frozen = cfg;
  frozen.generator.setZero();
  ObservationFilter filter(frozen, table, cfg.initial_filter.full(), DistressState::none(2));
  StockVector dY(2);
  dY << 0.0, 0.0;
  // zero dt isolates the jump
  filter.step(dY, 0, 0.0);
  CHECK(filter.probabilities()(0) == Approx(0.5 / 0.55).epsilon(1e-12));
  CHECK(filter.state() == DistressState::parse("10"));
}

TEST_CASE("P-tilde filter: zero strategy, zero rate") {
  const MarketConfig cfg = benchmark_config();
  SimConfig sim;
  sim.dt = 0.01;
  sim.horizon = 3.0;
  sim.n_paths = 50;
  const FeedbackFunction cash = [](double, const SimplexPoint&, DistressState z) {
    return StockVector(StockVector::Zero(z.size()));
  };
  for (const ControlledPath& path : run_filter_tildeP(cfg, sim, cash)) {
    CHECK(path.eta_integral == 0.0);
  }
}

TEST_CASE("P-tilde filter: uninformative regimes relax deterministically") {
  const MarketConfig cfg = uninformative(0.9);
  SimConfig sim;
  sim.dt = 0.005;
  sim.horizon = 3.0;
  const FeedbackFunction cash = [](double, const SimplexPoint&, DistressState z) {
    return StockVector(StockVector::Zero(z.size()));
  };
  const ControlledPath path = run_filter_tildeP_path(cfg, sim, cash, cfg.initial_filter, DistressState::none(2), 3);
  double err = 0.0;
  for (std::size_t j = 0; j < path.filter.time.size(); ++j) {
    err = std::max(err,
                   std::abs(path.filter.probs(static_cast<Eigen::Index>(j), 0) - relaxation(0.9, path.filter.time[j])));
  }
  CHECK(err < 0.5 * sim.dt);
}

TEST_CASE("P-tilde distress probability matches the intensity integral") {
  // H_i(t) - int_0^{t ^ tau_i} h_tilde_i ds is a martingale, so
  // P(tau_i <= T) = E[int_0^{T ^ tau_i} h_tilde_i ds]; the integral is an
  // independent quadrature of the filtered intensity along each path.
  const MarketConfig cfg = benchmark_config();
  const CoefficientTable table(cfg);
  const double dt = 0.002;
  const int steps = 1500;
  StockVector pi(2);
  pi << 1.0, 0.5;
  MeanVar distressed[2], compensator[2], difference[2];
  for (std::uint64_t p = 0; p < 20000; ++p) {
    PathRng rng(31, p);
    ControlledFilter filter(cfg, table, rng, cfg.initial_filter.full(), DistressState::none(2));
    double integral[2] = {0.0, 0.0};
    for (int j = 0; j < steps; ++j) {
      const DistressState z = filter.state();
      const SimplexPoint lambda = filter.point();
      for (int i = 0; i < 2; ++i) {
        if (z.alive(i)) integral[i] += tilde_intensity(cfg, j * dt, lambda, i, z) * dt;
      }
      filter.step(j * dt, pi, dt);
    }
    for (int i = 0; i < 2; ++i) {
      const double hit = filter.state().distressed(i) ? 1.0 : 0.0;
      distressed[i].add(hit);
      compensator[i].add(integral[i]);
      difference[i].add(hit - integral[i]);
    }
  }
  for (int i = 0; i < 2; ++i) {
    CHECK(distressed[i].mean() > 0.2);
    CHECK(std::abs(difference[i].mean()) < 3.0 * difference[i].stderr_());
  }
}

TEST_CASE("Dynkin check of the generator under P-tilde") {
  MarketConfig cfg = benchmark_config();
  const CoefficientTable table(cfg);
  const double lam = 0.35;
  const DistressState z = DistressState::none(2);
  StockVector pi(2);
  pi << 0.8, -0.4;
  // f(lambda, z) = lambda^2 + c(z)
  auto c_of = [](DistressState s) { return 0.25 * s.count() + 0.1 * (s.distressed(0) ? 1.0 : 0.0); };
  auto f = [&](double l, DistressState s) { return l * l + c_of(s); };

  const SimplexPoint x = SimplexPoint::scalar(lam);
  const FilterDiffusion sig = sigma_matrix(cfg, 0.0, x, z);
  double drift = beta_varpi(cfg, 0.0, x)(0);
  double jumps = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double h1 = cfg.intensity(i, 0, z);
    const double ht = tilde_intensity(cfg, 0.0, x, i, z);
    drift += cfg.gamma * sig(0, i) * cfg.volatility(i, z) * pi(i) - lam * (h1 - ht);
    const double revised = jump_revision(cfg, 0.0, x, i, z).coords(0);
    jumps += ht * (f(revised, flip(z, i)) - f(lam, z));
  }
  const double generator = 2.0 * lam * drift + (sig * sig.transpose())(0, 0) + jumps;

  // first-order Richardson combination of h and h/2 cancels the O(h) term
  auto dynkin = [&](double horizon) {
    const int steps = 40;
    const double dt = horizon / steps;
    MeanVar change;
    for (std::uint64_t p = 0; p < 200000; ++p) {
      PathRng rng(41, p);
      ControlledFilter filter(cfg, table, rng, x.full(), z);
      for (int j = 0; j < steps; ++j) filter.step(j * dt, pi, dt);
      change.add((f(filter.probabilities()(0), filter.state()) - f(lam, z)) / horizon);
    }
    return change;
  };
  const MeanVar coarse = dynkin(0.02);
  const MeanVar fine = dynkin(0.01);
  const double extrapolated = 2.0 * fine.mean() - coarse.mean();
  const double se = std::hypot(2.0 * fine.stderr_(), coarse.stderr_());
  CHECK(std::abs(extrapolated - generator) < 3.0 * se + 0.02);
  CHECK(std::abs(fine.mean() - generator) < std::abs(coarse.mean() - generator) + 3.0 * se);
}
