#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nudge/analysis.hpp"
#include "nudge/dynamics.hpp"
#include "support/test_util.hpp"

using namespace nudge;

TEST_CASE("zero susceptibility pins the limit at the input") {
  auto net = testing::make_network(
      {{0, 1}, {1, 0}}, Vec::Ones(2), Vec::Zero(2),
      (Vec(2) << 0.2, 0.6).finished(), Vec::Constant(2, 0.5));
  const Vec u = (Vec(2) << 0.3, 0.9).finished();
  const auto eq = fj_equilibrium(net, u);
  CHECK((eq.x_inf - u).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK(eq.residual <= 1e-10);
}

TEST_CASE("unit input gives unit limit") {
  Rng rng(3);
  const auto net = testing::random_network(rng, 7);
  const auto eq = fj_equilibrium(net, Vec::Ones(7));
  CHECK((eq.x_inf - Vec::Ones(7)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("two-agent limit by hand") {
  const auto net = testing::make_network(
      {{0, 1}, {1, 0}}, Vec::Ones(2), Vec::Constant(2, 0.5),
      (Vec(2) << 0.2, 0.4).finished(), Vec::Constant(2, 0.5));
  const auto eq = fj_equilibrium(net, (Vec(2) << 1.0, 0.0).finished());
  CHECK(eq.x_inf[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(eq.x_inf[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("limit is a fixed point of the update") {
  Rng rng(19);
  const auto net = testing::random_network(rng, 9);
  const Vec u = Vec::Constant(9, 0.45);
  const auto eq = fj_equilibrium(net, u);
  const Vec once =
      net.susceptibility.asDiagonal() * (net.influence * eq.x_inf) +
      (Vec::Ones(9) - net.susceptibility).cwiseProduct(u);
  CHECK((once - eq.x_inf).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("fully susceptible ring is reported as singular") {
  auto net = testing::make_network(
      {{0, 1}, {1, 0}}, Vec::Ones(2), Vec::Ones(2),
      (Vec(2) << 0.2, 0.4).finished(), Vec::Constant(2, 0.5));
  CHECK_THROWS_AS(fj_equilibrium(net, Vec::Zero(2)), Error);
}

TEST_CASE("forced limit reduces to the free one at zero inputs") {
  Rng rng(23);
  const auto net = testing::random_network(rng, 6);
  const auto forced = forced_equilibrium(net, net.persistence, Vec::Zero(6),
                                         Vec::Zero(6));
  const auto free = fj_equilibrium(net, net.inherent_bias);
  CHECK((forced.x_inf - free.x_inf).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("scalar forced limit") {
  const auto net = testing::make_scalar_network(0.5, 0.2, 0.5);
  const auto eq = forced_equilibrium(net, net.persistence,
                                     Vec::Constant(1, 0.2),
                                     Vec::Constant(1, 0.4));
  CHECK(eq.u_inf[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(eq.x_inf[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("forced limit matches a long constant-input run") {
  Rng rng(29);
  const auto net = testing::random_network(rng, 6);
  Vec u_bar_s(6), u_bar_l(6);
  for (int v = 0; v < 6; ++v) {
    const double rho = net.persistence[v];
    const double headroom = 1.0 - net.inherent_bias[v];
    u_bar_l[v] = rng.uniform(0.0, headroom);
    const double slack = headroom - rho * u_bar_l[v];
    u_bar_l[v] = std::min(u_bar_l[v], 1.0);
    u_bar_s[v] = rho < 1.0 ? rng.uniform(0.0, std::min(1.0, slack / (1.0 - rho)))
                           : 0.0;
  }
  const auto eq =
      forced_equilibrium(net, net.persistence, u_bar_s, u_bar_l);

  BudgetLedger ledger(1e12, 0.5);
  const IncentiveInput constant{u_bar_s, u_bar_l};
  const auto traj = simulate_trajectory(
      net, MemoryKernel::iir(3.0),
      [&](const SimState&, int) { return constant; }, 10000, ledger, 31,
      Vec::Constant(6, 0.2));
  CHECK((traj.states.back().x - eq.x_inf).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("forced limit rejects an out-of-range effective input") {
  const auto net = testing::make_scalar_network(0.5, 0.9, 0.5);
  CHECK_THROWS_AS(forced_equilibrium(net, net.persistence,
                                     Vec::Constant(1, 0.4),
                                     Vec::Constant(1, 0.4)),
                  HeadroomError);
}

TEST_CASE("doubling solve degenerates correctly at a = 0") {
  Mat q(2, 2);
  q << 2.0, 0.5, 0.5, 1.0;
  const auto cert = solve_discrete_lyapunov(Mat::Zero(2, 2), q);
  CHECK((cert.p - q).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK(cert.residual <= 1e-12);
}

TEST_CASE("scalar doubling solve has the closed form") {
  const auto cert = solve_discrete_lyapunov(Mat::Constant(1, 1, 0.5),
                                            Mat::Identity(1, 1));
  CHECK(cert.p(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("random stable systems meet the residual contract") {
  Rng rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = 2 + static_cast<int>(rng.below(7));
    Mat a(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        a(i, j) = rng.uniform(-1.0, 1.0);
      }
    }
    a *= 0.9 / std::max(1e-9, spectral_radius(a, 1e-10, 50000));
    Mat q = Mat::Identity(m, m);
    const auto cert = solve_discrete_lyapunov(a, q);
    CHECK(cert.residual <= 1e-8);
    CHECK((cert.p - cert.p.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("solution dominates the right-hand side for identity q") {
  Rng rng(53);
  Mat a(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      a(i, j) = rng.uniform(-0.4, 0.4);
    }
  }
  const auto cert = solve_discrete_lyapunov(a, Mat::Identity(4, 4));
  for (int k = 0; k < 20; ++k) {
    Vec v(4);
    for (int i = 0; i < 4; ++i) {
      v[i] = rng.uniform(-1.0, 1.0);
    }
    CHECK(v.dot((cert.p - Mat::Identity(4, 4)) * v) >= -1e-10);
  }
}

TEST_CASE("unstable or asymmetric inputs are rejected") {
  CHECK_THROWS_AS(
      solve_discrete_lyapunov(Mat::Identity(2, 2), Mat::Identity(2, 2)),
      Error);
  Mat q(2, 2);
  q << 1.0, 0.3, -0.3, 1.0;
  CHECK_THROWS_AS(solve_discrete_lyapunov(Mat::Zero(2, 2), q), Error);
}
