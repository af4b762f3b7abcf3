#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "contagion/model.hpp"

#include <random>

using namespace contagion;
using doctest::Approx;

namespace {

const DistressState kNone = DistressState::none(2);

double lam_of(double x) { return x; }

}  // namespace

TEST_CASE("log drift") {
  const MarketConfig cfg = benchmark_config();
  CHECK(log_drift(cfg, 0, 0, kNone) == Approx(1.92).epsilon(1e-14));
  CHECK(log_drift(cfg, 1, 1, kNone) == Approx(0.32).epsilon(1e-14));

  MarketConfig one(1, 1);
  one.set_drift(0, 0, 0.5);
  one.set_intensity(0, 0, 0.5);
  one.set_volatility(0, std::sqrt(2.0));
  CHECK(std::abs(log_drift(one, 0, 0, DistressState::none(1))) < 1e-15);
  CHECK_THROWS_AS(log_drift(cfg, 2, 0, kNone), std::out_of_range);
  CHECK_THROWS_AS(log_drift(cfg, 0, 2, kNone), std::out_of_range);
}

TEST_CASE("tilde interpolation") {
  Eigen::Vector2d h(1.0, 0.1);
  CHECK(tilde_interp(h, SimplexPoint::scalar(0.5)) == Approx(0.55).epsilon(1e-14));
  CHECK(tilde_interp(h, SimplexPoint::scalar(1.0)) == 1.0);
  CHECK(tilde_interp(h, SimplexPoint::scalar(0.0)) == 0.1);
  CHECK_THROWS_AS(tilde_interp(Eigen::Vector3d(1, 2, 3), SimplexPoint::scalar(0.5)), std::invalid_argument);

  // affine along each edge of the 2-simplex
  Eigen::Vector3d g(0.3, -1.2, 2.5);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const RegimeVector vertices[3] = {RegimeVector(Eigen::Vector2d(1, 0)), RegimeVector(Eigen::Vector2d(0, 1)),
                                    RegimeVector(Eigen::Vector2d(0, 0))};
  double worst = 0.0;
  for (int a = 0; a < 3; ++a) {
    CHECK(tilde_interp(g, SimplexPoint(vertices[a])) == g(a));
    for (int b = 0; b < 3; ++b) {
      if (a == b) continue;
      for (int rep = 0; rep < 100; ++rep) {
        const double s = u(gen);
        const SimplexPoint p(RegimeVector((1.0 - s) * vertices[a] + s * vertices[b]));
        worst = std::max(worst, std::abs(tilde_interp(g, p) - ((1.0 - s) * g(a) + s * g(b))));
      }
    }
  }
  CHECK(worst < 1e-14);
}

TEST_CASE("sigma matrix") {
  const MarketConfig cfg = benchmark_config();
  const FilterDiffusion s = sigma_matrix(cfg, 0.0, SimplexPoint::scalar(0.5), kNone);
  REQUIRE(s.rows() == 1);
  REQUIRE(s.cols() == 2);
  // lambda(1-lambda) * dmu / vartheta with dmu = (1.4, 1.7)
  CHECK(s(0, 0) == Approx(0.25 * 1.4 / 0.4).epsilon(1e-14));
  CHECK(s(0, 1) == Approx(0.25 * 1.7 / 0.6).epsilon(1e-14));
  CHECK(s(0, 0) == Approx(0.875));
  CHECK(s(0, 1) == Approx(0.708333).epsilon(1e-6));
  CHECK((s * s.transpose())(0, 0) == Approx(1.267361).epsilon(1e-6));

  for (double l : {0.0, 1.0}) {
    CHECK(sigma_matrix(cfg, 0.0, SimplexPoint::scalar(l), kNone).cwiseAbs().maxCoeff() == 0.0);
  }
  const FilterDiffusion masked = masked_sigma(cfg, 0.0, SimplexPoint::scalar(0.5), DistressState::parse("10"));
  CHECK(masked(0, 0) == 0.0);
  CHECK(masked(0, 1) == Approx(s(0, 1)));
}

TEST_CASE("sigma sigma^T is Lipschitz on the closed domain") {
  const MarketConfig cfg = benchmark_config();
  auto ss = [&](double l, DistressState z) {
    const FilterDiffusion s = sigma_matrix(cfg, 0.0, SimplexPoint::scalar(lam_of(l)), z);
    return (s * s.transpose())(0, 0);
  };
  for (std::uint32_t bits = 0; bits < 4; ++bits) {
    const DistressState z(2, bits);
    double modulus = 0.0;
    const int fine = 20000;
    for (int m = 0; m < fine; ++m) {
      const double a = double(m) / fine;
      const double b = double(m + 1) / fine;
      modulus = std::max(modulus, std::abs(ss(b, z) - ss(a, z)) / (b - a));
    }
    modulus *= 1.01;
    std::mt19937_64 gen(11 + bits);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bool ok = true;
    for (int rep = 0; rep < 10000; ++rep) {
      const double t1 = 3.0 * u(gen), t2 = 3.0 * u(gen);
      const double l1 = u(gen), l2 = u(gen);
      const double dist = std::hypot(t1 - t2, l1 - l2);
      ok = ok && std::abs(ss(l1, z) - ss(l2, z)) <= modulus * dist + 1e-15;
    }
    CHECK(ok);
  }
}

TEST_CASE("gamma vector") {
  const MarketConfig cfg = benchmark_config();
  const StockVector g0 = gamma_vec(cfg, 0.0, SimplexPoint::scalar(0.0), kNone);
  CHECK(g0(0) == Approx(-0.6).epsilon(1e-14));
  CHECK(g0(1) == Approx(-0.5).epsilon(1e-14));
  CHECK(gamma_vec(cfg, 0.0, SimplexPoint::scalar(1.0), kNone)(0) == Approx(-2.0).epsilon(1e-14));

  MarketConfig flat = benchmark_config();
  flat.rate = 0.7;
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) {
      flat.set_drift(i, k, 0.5);
      flat.set_intensity(i, k, 0.2);
    }
  }
  CHECK(gamma_vec(flat, 0.0, SimplexPoint::scalar(0.3), kNone).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("beta varpi") {
  const MarketConfig cfg = benchmark_config();
  CHECK(beta_varpi(cfg, 0.0, SimplexPoint::scalar(0.0))(0) == Approx(0.4).epsilon(1e-14));
  CHECK(std::abs(beta_varpi(cfg, 0.0, SimplexPoint::scalar(4.0 / 9.0))(0)) < 1e-15);
  MarketConfig frozen = benchmark_config();
  frozen.generator.setZero();
  CHECK(beta_varpi(frozen, 0.0, SimplexPoint::scalar(0.37))(0) == 0.0);
}

TEST_CASE("theta and rho") {
  MarketConfig cfg = benchmark_config();
  const ThetaRho at0 = theta_rho(cfg, 0.0, SimplexPoint::scalar(0.0), kNone);
  CHECK(at0.theta(0) == Approx(0.4).epsilon(1e-14));
  // -0.2 + (0.3 / 1.4) * (0.36 / 0.16 + 0.25 / 0.36)
  CHECK(at0.rho == Approx(-0.2 + (0.3 / 1.4) * (2.25 + 0.25 / 0.36)).epsilon(1e-14));
  CHECK(at0.rho == Approx(0.430952).epsilon(1e-6));

  cfg.rate = 0.05;
  for (double l : {0.0, 0.25, 0.8, 1.0}) {
    const ThetaRho all = theta_rho(cfg, 0.0, SimplexPoint::scalar(l), DistressState::all(2));
    CHECK(all.theta(0) == beta_varpi(cfg, 0.0, SimplexPoint::scalar(l))(0));
    CHECK(all.rho == cfg.gamma * cfg.rate);
  }

  cfg.gamma = 1e-300;
  const SimplexPoint x = SimplexPoint::scalar(0.3);
  const ThetaRho tiny = theta_rho(cfg, 0.0, x, kNone, JumpDrift::omitted);
  CHECK(tiny.theta(0) == Approx(beta_varpi(cfg, 0.0, x)(0)).epsilon(1e-14));
  // compensator: -0.3 * 0.7 * ((1 - 0.1) + (1 - 0.1)) for the two live stocks
  const ThetaRho full = theta_rho(cfg, 0.0, x, kNone);
  CHECK(full.theta(0) - tiny.theta(0) == Approx(-0.3 * 0.7 * 1.8).epsilon(1e-13));
  CHECK(jump_compensator(cfg, 0.0, x, DistressState(2, 1u))(0) == Approx(-0.3 * 0.7 * 0.9).epsilon(1e-13));
  CHECK(jump_compensator(cfg, 0.0, SimplexPoint::scalar(1.0), kNone)(0) == 0.0);
}

TEST_CASE("jump revision") {
  const MarketConfig cfg = benchmark_config();
  CHECK(jump_revision(cfg, 0.0, SimplexPoint::scalar(0.5), 0, kNone).coords(0) ==
        Approx(0.5 / 0.55).epsilon(1e-14));
  CHECK(jump_revision(cfg, 0.0, SimplexPoint::scalar(0.5), 0, kNone).coords(0) ==
        Approx(0.909091).epsilon(1e-6));
  CHECK(jump_revision(cfg, 0.0, SimplexPoint::scalar(0.0), 1, kNone).coords(0) == 0.0);
  CHECK_THROWS_AS(jump_revision(cfg, 0.0, SimplexPoint::scalar(0.5), 0, DistressState::parse("10")),
                  std::invalid_argument);

  MarketConfig flat = benchmark_config();
  flat.set_intensity(0, 0, 0.3);
  flat.set_intensity(0, 1, 0.3);
  CHECK(jump_revision(flat, 0.0, SimplexPoint::scalar(0.42), 0, kNone).coords(0) == Approx(0.42).epsilon(1e-15));

  MarketConfig three(1, 3);
  three.set_intensity(0, 0, 2.0);
  three.set_intensity(0, 1, 0.5);
  three.set_intensity(0, 2, 0.1);
  std::mt19937_64 gen(3);
  std::gamma_distribution<double> e(1.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    RegimeVector p(3);
    p << e(gen), e(gen), e(gen);
    p /= p.sum();
    const SimplexPoint r = jump_revision(three, 0.0, SimplexPoint::from_full(p), 0, DistressState::none(1));
    REQUIRE(r.in_closure(1e-14));
  }
}

TEST_CASE("distress states") {
  const DistressState z00 = DistressState::parse("00");
  CHECK(flip(z00, 0) == DistressState::parse("10"));
  CHECK(flip(DistressState::parse("01"), 0) == DistressState::parse("11"));
  CHECK_THROWS_AS(flip(DistressState::parse("10"), 0), std::invalid_argument);
  CHECK(flip(z00, 1).count() == z00.count() + 1);
  CHECK(DistressState::parse("0110").str() == "0110");
  CHECK(DistressState::all(3).all_distressed());
  CHECK_THROWS(DistressState::parse("0x"));
}

TEST_CASE("validation") {
  CHECK_NOTHROW(benchmark_config().validate());
  MarketConfig bad = benchmark_config();
  bad.gamma = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = benchmark_config();
  bad.set_intensity(1, 0, DistressState::parse("10"), 0.0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = benchmark_config();
  bad.generator(0, 0) = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(benchmark_config() == benchmark_config());
}

TEST_CASE("eta tilde") {
  MarketConfig cfg = benchmark_config();
  StockVector zero = StockVector::Zero(2);
  CHECK(eta_tilde(cfg, 0.0, SimplexPoint::scalar(0.3), kNone, zero) == 0.0);
  StockVector pi(2);
  pi << 1.0, -0.5;
  const StockVector g = gamma_vec(cfg, 0.0, SimplexPoint::scalar(0.3), kNone);
  const double expected = pi.dot(g) + 0.5 * 0.7 * (0.16 + 0.25 * 0.36);
  CHECK(eta_tilde(cfg, 0.0, SimplexPoint::scalar(0.3), kNone, pi) == Approx(expected).epsilon(1e-14));
}
