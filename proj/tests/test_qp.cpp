#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "nudge/qp.hpp"
#include "nudge/rng.hpp"
#include "support/pgd_oracle.hpp"

using namespace nudge;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

QpProblem box_only(Mat h, Vec g, Vec lo, Vec up) {
  QpProblem p;
  p.hessian = std::move(h);
  p.linear = std::move(g);
  p.ineq_matrix = Mat(0, p.linear.size());
  p.ineq_bound = Vec(0);
  p.lower = std::move(lo);
  p.upper = std::move(up);
  return p;
}
}  // namespace

TEST_CASE("clamped scalar minimum") {
  // min (z-2)^2 over [0,1]
  const auto p = box_only(Mat::Constant(1, 1, 2.0), Vec::Constant(1, -4.0),
                          Vec::Zero(1), Vec::Ones(1));
  const auto sol = solve_qp(p);
  CHECK(sol.status == QpStatus::kOptimal);
  CHECK(sol.z[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("interior minimum is untouched by the box") {
  const auto p = box_only(Mat::Identity(4, 4), Vec::Zero(4),
                          Vec::Constant(4, -1.0), Vec::Ones(4));
  const auto sol = solve_qp(p);
  CHECK(sol.status == QpStatus::kOptimal);
  CHECK(sol.z.lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("solutions match a long projected-gradient run") {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const QpProblem p = testing::random_qp(rng);
    CAPTURE(trial);
    const auto sol = solve_qp(p, 1e-9, 1e-9, 100000);
    REQUIRE(sol.status == QpStatus::kOptimal);
    const Vec reference = testing::pgd_solve(p, 1000000);
    const double gap =
        testing::qp_objective(p, sol.z) - testing::qp_objective(p, reference);
    CHECK(std::abs(gap) <= 1e-6);
    const auto kkt = kkt_residuals(p, sol.z, sol.duals);
    CHECK(kkt.stationarity <= 1e-6);
    CHECK(kkt.feasibility <= 1e-6);
    CHECK(kkt.complementarity <= 1e-6);
  }
}

TEST_CASE("optimality certificates at the reported solution") {
  Rng rng(88);
  const QpProblem p = testing::random_qp(rng);
  const auto sol = solve_qp(p, 1e-8, 1e-8, 100000);
  REQUIRE(sol.status == QpStatus::kOptimal);
  const auto kkt = kkt_residuals(p, sol.z, sol.duals);
  CHECK(kkt.stationarity <= 10.0 * 1e-8 + 1e-9);
  CHECK(kkt.feasibility <= 10.0 * 1e-8);
  // box respected exactly
  for (int i = 0; i < p.dim(); ++i) {
    CHECK(sol.z[i] >= p.lower[i]);
    CHECK(sol.z[i] <= p.upper[i]);
  }
}

TEST_CASE("violations register in the feasibility residual") {
  const auto p = box_only(Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2),
                          Vec::Ones(2));
  const Vec z = (Vec(2) << -0.5, 0.5).finished();
  const auto kkt = kkt_residuals(p, z, Vec(0));
  CHECK(kkt.feasibility >= 0.5);
}

TEST_CASE("the zero problem has zero residuals at the origin") {
  const auto p = box_only(Mat::Zero(2, 2), Vec::Zero(2),
                          Vec::Constant(2, -kInf), Vec::Constant(2, kInf));
  const auto kkt = kkt_residuals(p, Vec::Zero(2), Vec(0));
  CHECK(kkt.stationarity == 0.0);
  CHECK(kkt.feasibility == 0.0);
  CHECK(kkt.complementarity == 0.0);
}

TEST_CASE("contradictory rows are reported infeasible") {
  QpProblem p = box_only(Mat::Identity(1, 1), Vec::Zero(1), Vec::Zero(1),
                         Vec::Ones(1));
  p.ineq_matrix = Mat::Constant(1, 1, 1.0);
  p.ineq_bound = Vec::Constant(1, -1.0);  // z <= -1 against z >= 0
  const auto sol = solve_qp(p, 1e-8, 1e-8, 20000);
  CHECK(sol.status == QpStatus::kInfeasible);
}

TEST_CASE("an exhausted iteration cap returns the best iterate") {
  Rng rng(9);
  const QpProblem p = testing::random_qp(rng);
  QpSettings settings;
  settings.max_iterations = 2;
  settings.check_interval = 1;
  const auto sol = solve_qp(p, settings);
  CHECK(sol.status == QpStatus::kMaxIterations);
  CHECK(sol.iterations == 2);
  for (int i = 0; i < p.dim(); ++i) {
    CHECK(sol.z[i] >= p.lower[i]);
    CHECK(sol.z[i] <= p.upper[i]);
  }
}

TEST_CASE("best-so-far objective envelope never increases") {
  Rng rng(17);
  const QpProblem p = testing::random_qp(rng);
  std::vector<double> envelope;
  QpSettings settings;
  settings.callback = [&envelope](int, const Vec&, double obj, double, double) {
    envelope.push_back(envelope.empty() ? obj
                                        : std::min(envelope.back(), obj));
  };
  solve_qp(p, settings);
  REQUIRE(envelope.size() > 1);
  for (size_t i = 1; i < envelope.size(); ++i) {
    CHECK(envelope[i] <= envelope[i - 1] + 1e-12);
  }
}

TEST_CASE("scaling the objective leaves the minimizer in place") {
  Rng rng(23);
  QpProblem p = testing::random_qp(rng);
  QpProblem scaled = p;
  scaled.hessian *= 10.0;
  scaled.linear *= 10.0;
  const auto a = solve_qp(p, 1e-10, 1e-10, 200000);
  const auto b = solve_qp(scaled, 1e-10, 1e-10, 200000);
  REQUIRE(a.status == QpStatus::kOptimal);
  REQUIRE(b.status == QpStatus::kOptimal);
  CHECK((a.z - b.z).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("warm starts do not hurt convergence") {
  Rng rng(31);
  const QpProblem p = testing::random_qp(rng);
  const auto cold = solve_qp(p, 1e-9, 1e-9, 100000);
  REQUIRE(cold.status == QpStatus::kOptimal);
  QpWarmStart warm{cold.z, cold.duals_full};
  QpSettings settings;
  settings.tol_primal = 1e-9;
  settings.tol_dual = 1e-9;
  const auto again = solve_qp(p, settings, &warm);
  CHECK(again.status == QpStatus::kOptimal);
  CHECK(again.iterations <= cold.iterations);
}

TEST_CASE("malformed problems are rejected") {
  QpProblem p = box_only(Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2),
                         Vec::Ones(2));
  p.hessian(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(solve_qp(p), Error);

  QpProblem q = box_only(Mat::Identity(1, 1), Vec::Zero(1), Vec::Ones(1),
                         Vec::Zero(1));  // empty box
  CHECK_THROWS_AS(solve_qp(q), Error);
}

TEST_CASE("identical repeated solves reuse the engine factorization") {
  Rng rng(41);
  const QpProblem p = testing::random_qp(rng);
  QpEngine engine(p.hessian, std::make_shared<DenseConstraints>(p.ineq_matrix),
                  p.lower, p.upper, {});
  const auto first = engine.solve(p.linear, p.ineq_bound);
  QpWarmStart warm{first.z, first.duals_full};
  const auto second = engine.solve(p.linear, p.ineq_bound, &warm);
  CHECK(second.status == QpStatus::kOptimal);
  CHECK((first.z - second.z).lpNorm<Eigen::Infinity>() <= 1e-6);
}
