#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "contagion/hjb.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace contagion;
using doctest::Approx;

namespace {

const DistressState kNone(2, 0u);
const DistressState kFirst(2, 1u);   // stock 1 distressed
const DistressState kSecond(2, 2u);  // stock 2 distressed
const DistressState kBoth(2, 3u);

Grid grid_of(int n_space, int n_time) {
  Grid g;
  g.n_space = n_space;
  g.n_time = n_time;
  return g;
}

double max_abs_on_coarse(const ValueSurface& coarse, const ValueSurface& fine) {
  const int rt = (fine.grid.n_time - 1) / (coarse.grid.n_time - 1);
  const int rs = (fine.grid.n_space - 1) / (coarse.grid.n_space - 1);
  double worst = 0.0;
  for (int j = 0; j < coarse.grid.n_time; ++j) {
    for (int m = 0; m < coarse.grid.n_space; ++m) {
      worst = std::max(worst, std::abs(coarse.w(j, m) - fine.w(j * rt, m * rs)));
    }
  }
  return worst;
}

/// Largest difference between b and c on the nodes of a (all three nested).
double max_abs_on_nodes(const ValueSurface& a, const ValueSurface& b, const ValueSurface& c) {
  const int tb = (b.grid.n_time - 1) / (a.grid.n_time - 1), sb = (b.grid.n_space - 1) / (a.grid.n_space - 1);
  const int tc = (c.grid.n_time - 1) / (a.grid.n_time - 1), sc = (c.grid.n_space - 1) / (a.grid.n_space - 1);
  double worst = 0.0;
  for (int j = 0; j < a.grid.n_time; ++j) {
    for (int m = 0; m < a.grid.n_space; ++m) {
      worst = std::max(worst, std::abs(b.w(j * tb, m * sb) - c.w(j * tc, m * sc)));
    }
  }
  return worst;
}

MarketConfig homogeneous_config(int n) {
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

}  // namespace

TEST_CASE("grid and option validation") {
  CHECK_THROWS_AS(grid_of(2, 10).validate(), ConfigError);
  CHECK_THROWS_AS(grid_of(3, 1).validate(), ConfigError);
  CHECK_NOTHROW(grid_of(3, 2).validate());
  SolveOptions o;
  o.mode = SolveOptions::Mode::stampacchia;
  o.truncation = 0.5;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o.truncation = 1.0;
  CHECK_NOTHROW(o.validate());
}

TEST_CASE("terminal state closed form") {
  MarketConfig cfg = benchmark_config();
  const Grid g = grid_of(11, 31);
  const ValueSurface zero = solve_terminal_state(cfg, g);
  CHECK(zero.analytic);
  CHECK(zero.state == kBoth);
  CHECK(zero.w.cwiseAbs().maxCoeff() == 0.0);

  cfg.rate = 0.05;
  const ValueSurface s = solve_terminal_state(cfg, g);
  for (int m = 0; m < g.n_space; ++m) {
    CHECK(s.w(0, m) == Approx(0.045).epsilon(1e-15));
    CHECK(s.w(g.n_time - 1, m) == 0.0);
  }
  CHECK(s.value(1.5, 0.37) == Approx(0.3 * 0.05 * 1.5).epsilon(1e-14));
}

TEST_CASE("closed form reproduced by time stepping") {
  SolveOptions stepped;
  stepped.analytic_terminal = false;
  for (double r : {0.0, 0.05, 0.2}) {
    CAPTURE(r);
    MarketConfig cfg = benchmark_config();
    cfg.rate = r;
    const Grid g = grid_of(201, 3000);
    const SurfaceMap analytic = recursive_solve(cfg, g, {});
    const SurfaceMap solved = recursive_solve(cfg, g, stepped);
    const ValueSurface& a = *analytic.at(kBoth);
    const ValueSurface& b = *solved.at(kBoth);
    CHECK(a.analytic);
    CHECK_FALSE(b.analytic);
    double exact_err = 0.0, stepped_err = 0.0;
    for (int j = 0; j < g.n_time; ++j) {
      const double closed = cfg.gamma * r * (cfg.horizon - a.time(j));
      exact_err = std::max(exact_err, (a.w.row(j).array() - closed).abs().maxCoeff());
      stepped_err = std::max(stepped_err, (b.w.row(j).array() - closed).abs().maxCoeff());
    }
    CHECK(exact_err < 1e-10);
    CHECK(stepped_err < 1e-6);
  }
}

TEST_CASE("stepper trivial cases") {
  // identical regimes and no switching: no diffusion and no drift
  MarketConfig flat(2, 2);
  for (int i = 0; i < 2; ++i) {
    flat.set_drift(i, 0, 0.3);
    flat.set_drift(i, 1, 0.3);
    flat.set_intensity(i, 0, 0.2);
    flat.set_intensity(i, 1, 0.2);
    flat.set_volatility(i, 0.5);
  }
  flat.gamma = 0.4;
  flat.rate = 0.1;
  flat.horizon = 2.0;
  flat.generator = Eigen::MatrixXd::Zero(2, 2);
  flat.initial_filter = SimplexPoint::scalar(0.5);
  const Grid g = grid_of(21, 11);
  const double dt = flat.horizon / (g.n_time - 1);

  SUBCASE("constant source") {
    Eigen::VectorXd next = Eigen::VectorXd::LinSpaced(g.n_space, -1.0, 2.0);
    const Eigen::VectorXd out = step_semilinear(flat, g, kBoth, {}, 3, next, {});
    CHECK((out - next).cwiseAbs().maxCoeff() == Approx(flat.gamma * flat.rate * dt).epsilon(1e-12));
    CHECK((out - next).maxCoeff() - (out - next).minCoeff() < 1e-14);
  }

  SUBCASE("constant data preserved") {
    MarketConfig cfg = benchmark_config();
    const Eigen::VectorXd next = Eigen::VectorXd::Constant(g.n_space, 2.5);
    const Eigen::VectorXd out = step_semilinear(cfg, g, kBoth, {}, 0, next, {});
    CHECK((out - next).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("xi coupling") {
  const MarketConfig cfg = benchmark_config();
  const Grid g = grid_of(101, 61);
  const SurfaceMap all = recursive_solve(cfg, g, {});
  const SimplexPoint lambda = SimplexPoint::scalar(0.3);

  MarketConfig rated = cfg;
  rated.rate = 0.05;
  CHECK(xi_coupling(rated, kBoth, 1.0, lambda, 0.7, {}) == Approx(0.015).epsilon(1e-14));

  // z = (0,1), r = 0, child identically 0: xi = (gamma/(1-gamma)) (0.6 + 1.4 lambda)^2 / (2 * 0.16)
  const double expected = (0.3 / 0.7) * std::pow(0.6 + 1.4 * 0.3, 2) / (2.0 * 0.16);
  CHECK(xi_coupling(cfg, kSecond, cfg.horizon, lambda, 0.0, all) == Approx(expected).epsilon(1e-13));
  CHECK(expected == Approx(1.393393).epsilon(1e-6));

  const double rho = theta_rho(cfg, 0.0, lambda, kNone).rho;
  CHECK(xi_coupling(cfg, kNone, 0.5, lambda, 800.0, all) == Approx(rho).epsilon(1e-12));
  CHECK_THROWS_AS(xi_coupling(cfg, kNone, 0.5, lambda, 0.0, {}), std::invalid_argument);
}

TEST_CASE("bounds") {
  const MarketConfig cfg = benchmark_config();
  const Grid g = grid_of(201, 301);
  const SurfaceMap all = recursive_solve(cfg, g, {});

  const Bounds b = bounds(cfg, g, kSecond, all);
  CHECK(b.child_sup == 0.0);
  // rho on the dense grid, written out for state (0,1)
  double lo = 1e300, hi = -1e300;
  for (int q = 0; q <= 100000; ++q) {
    const double l = q / 100000.0;
    const double rho = -(0.1 + 0.9 * l) + (0.3 / 1.4) * std::pow(0.6 + 1.4 * l, 2) / 0.16;
    lo = std::min(lo, rho);
    hi = std::max(hi, rho);
  }
  CHECK(b.rho_inf == Approx(lo).epsilon(1e-12));
  CHECK(b.rho_sup == Approx(hi).epsilon(1e-12));
  CHECK(b.intensity_sup == Approx(1.0).epsilon(1e-14));
  CHECK(b.lower(cfg.horizon) == 0.0);
  CHECK(b.upper(cfg.horizon) == Approx(4.0 * (1.0 + hi)).epsilon(1e-12));
  CHECK(b.upper(cfg.horizon) == Approx(21.428571).epsilon(1e-7));

  for (const auto& [z, s] : all) {
    CAPTURE(z.str());
    const Bounds& e = s->bounds;
    CHECK(e.lower(cfg.horizon) <= 0.0);
    CHECK(e.upper(cfg.horizon) >= 0.0);
    CHECK(s->w.minCoeff() >= e.lower(cfg.horizon));
    CHECK(s->w.maxCoeff() <= e.upper(cfg.horizon));
    CHECK(s->w.row(g.n_time - 1).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("dirichlet boundary mode") {
  const MarketConfig cfg = benchmark_config();
  SolveOptions o;
  o.boundary = SolveOptions::Boundary::dirichlet_zero;
  o.mode = SolveOptions::Mode::stampacchia;
  o.truncation = 100.0;
  const SurfaceMap all = recursive_solve(cfg, grid_of(41, 101), o);
  for (const auto& [z, s] : all) {
    CAPTURE(z.str());
    CHECK(s->w.col(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(s->w.col(40).cwiseAbs().maxCoeff() == 0.0);
    CHECK(s->w.allFinite());
  }
  CHECK(all.at(kNone)->w(0, 20) > 0.0);

  // untruncated quadratic terms blow up in the boundary layer
  o.mode = SolveOptions::Mode::direct;
  CHECK_THROWS_AS(recursive_solve(cfg, grid_of(41, 101), o), NumericalError);
}

TEST_CASE("exchangeable stocks give identical surfaces") {
  MarketConfig cfg = homogeneous_config(2);
  cfg.horizon = 3.0;
  const SurfaceMap all = recursive_solve(cfg, grid_of(101, 601), {});
  CHECK((all.at(kFirst)->w - all.at(kSecond)->w).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("state reduction") {
  SUBCASE("counts") {
    MarketConfig two_groups = homogeneous_config(4);
    for (int i = 2; i < 4; ++i) {
      two_groups.set_drift(i, 0, 1.1);
      two_groups.set_volatility(i, 0.3);
    }
    CHECK(reduce_states(two_groups, {0, 0, 1, 1}).solve_count == 9);
    for (int n = 1; n <= 5; ++n) {
      CHECK(reduce_states(homogeneous_config(n), std::vector<int>(static_cast<std::size_t>(n), 0)).solve_count ==
            n + 1);
    }
    std::vector<int> singletons{0, 1, 2, 3};
    CHECK(reduce_states(two_groups, singletons).solve_count == 16);
    CHECK_THROWS_AS(reduce_states(two_groups, {0, 0, 0, 1}), ConfigError);
    CHECK_THROWS_AS(reduce_states(two_groups, {0, 0}), ConfigError);

    const StateReduction red = reduce_states(two_groups, {0, 0, 1, 1});
    CHECK(red.canonical.at(DistressState(4, 0b0110u)) == DistressState(4, 0b0101u));
    CHECK(red.canonical.at(DistressState(4, 0b1010u)) == DistressState(4, 0b0101u));
  }

  SUBCASE("state-dependent tables") {
    MarketConfig cfg = homogeneous_config(2);
    cfg.set_intensity(1, 0, kFirst, 1.5);  // stock 2 reacts to stock 1
    CHECK_THROWS_AS(reduce_states(cfg, {0, 0}), ConfigError);
    cfg.set_intensity(0, 0, kSecond, 1.5);  // and symmetrically
    CHECK(reduce_states(cfg, {0, 0}).solve_count == 3);
  }

  SUBCASE("reduced solve matches the full solve") {
    const MarketConfig cfg = homogeneous_config(3);
    const Grid g = grid_of(41, 201);
    const StateReduction red = reduce_states(cfg, {0, 0, 0});
    CHECK(red.solve_count == 4);
    const SurfaceMap full = recursive_solve(cfg, g, {});
    const SurfaceMap reduced = recursive_solve(cfg, g, {}, &red);
    REQUIRE(reduced.size() == 8);
    double worst = 0.0;
    for (const auto& [z, s] : full) worst = std::max(worst, (s->w - reduced.at(z)->w).cwiseAbs().maxCoeff());
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("stampacchia truncation") {
  CHECK(1.0 * truncation_factor(1.0, 1.0) == 0.5);
  CHECK(truncation_factor(0.0, 3.0) == 1.0);

  const MarketConfig cfg = benchmark_config();
  const std::vector<double> ms{10.0, 100.0, 1000.0, 10000.0};
  const std::vector<double> d = stampacchia_convergence(cfg, grid_of(101, 1000), ms);
  REQUIRE(d.size() == ms.size());
  for (std::size_t q = 1; q < d.size(); ++q) CHECK(d[q] <= 1.05 * d[q - 1]);
  CHECK(d.back() < 1e-3);
}

TEST_CASE("convergence in time") {
  const MarketConfig cfg = benchmark_config();
  const SurfaceMap a = recursive_solve(cfg, grid_of(101, 301), {});
  const SurfaceMap b = recursive_solve(cfg, grid_of(101, 601), {});
  const SurfaceMap c = recursive_solve(cfg, grid_of(101, 1201), {});
  const SurfaceMap ref = recursive_solve(cfg, grid_of(101, 4801), {});
  for (DistressState z : {kNone, kFirst, kSecond}) {
    CAPTURE(z.str());
    // halving dt against a reference four times finer than the halved step
    const double ratio = max_abs_on_coarse(*a.at(z), *ref.at(z)) / max_abs_on_coarse(*b.at(z), *ref.at(z));
    CHECK(ratio == Approx(2.0).epsilon(0.3));
    const double order = std::log2(max_abs_on_nodes(*a.at(z), *a.at(z), *b.at(z)) /
                                   max_abs_on_nodes(*a.at(z), *b.at(z), *c.at(z)));
    CHECK(order >= 0.95);
  }
}

TEST_CASE("convergence in lambda") {
  const MarketConfig cfg = benchmark_config();
  const SurfaceMap a = recursive_solve(cfg, grid_of(81, 3001), {});
  const SurfaceMap b = recursive_solve(cfg, grid_of(161, 3001), {});
  const SurfaceMap c = recursive_solve(cfg, grid_of(321, 3001), {});
  for (DistressState z : {kNone, kFirst, kSecond}) {
    CAPTURE(z.str());
    const double order = std::log2(max_abs_on_nodes(*a.at(z), *a.at(z), *b.at(z)) /
                                   max_abs_on_nodes(*a.at(z), *b.at(z), *c.at(z)));
    CHECK(order >= 1.9);
  }
}

TEST_CASE("surface csv") {
  const MarketConfig cfg = benchmark_config();
  const SurfaceMap all = recursive_solve(cfg, grid_of(3, 2), {});
  const auto path = std::filesystem::temp_directory_path() / "contagion_surface_test" / "w_00.csv";
  write_surface_csv(*all.at(kNone), path.string());
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "t,lambda,w");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
  std::filesystem::remove_all(path.parent_path());
}
