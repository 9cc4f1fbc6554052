// Acceptance suite: runs every release criterion end to end and prints one
// PASS/FAIL line each. Exit code is the number of failures.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "nudge/analysis.hpp"
#include "nudge/config.hpp"
#include "nudge/csvio.hpp"
#include "nudge/dynamics.hpp"
#include "nudge/policy.hpp"
#include "nudge/qp.hpp"
#include "nudge/sweep.hpp"
#include "support/pgd_oracle.hpp"
#include "support/test_util.hpp"

using namespace nudge;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& what,
            const std::string& detail) {
  std::printf("criterion %2d %s: %s (%s)\n", criterion,
              pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) {
    ++failures;
  }
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

InfluenceNetwork random_small_network(std::uint64_t seed) {
  Rng rng(seed);
  const int n = 3 + static_cast<int>(rng.below(18));  // n <= 20
  return testing::random_network(rng, n);
}

// ---------------------------------------------------------------- 1
void criterion_open_loop_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    const auto net = random_small_network(100 + s);
    const int n = net.n_agents;
    const Vec ones = Vec::Ones(n);
    Vec x = Vec::Constant(n, 0.5);
    const Vec anchor =
        (ones - net.susceptibility).cwiseProduct(net.inherent_bias);
    for (int t = 0; t < 10000; ++t) {
      x = net.susceptibility.asDiagonal() * (net.influence * x) + anchor;
    }
    const auto eq = fj_equilibrium(net, net.inherent_bias);
    worst = std::max(worst, (x - eq.x_inf).lpNorm<Eigen::Infinity>());
  }
  const double elapsed = seconds_since(t0);
  report(1, worst <= 1e-8 && elapsed < 5.0,
         "open-loop runs reach the closed-form limit",
         "worst gap " + format_g(worst, 3) + ", " + format_g(elapsed, 3) +
             " s");
}

// ---------------------------------------------------------------- 2
void criterion_memory_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (double tau : {1.0, 3.0, 10.0}) {
    const MemoryKernel k = MemoryKernel::iir(tau);
    Rng rng(static_cast<std::uint64_t>(tau * 97));
    std::vector<Vec> history;
    Vec recursive = Vec::Zero(4);
    for (int t = 0; t < 200; ++t) {
      const Vec direct = memory_convolution(k, history, 4);
      worst = std::max(worst,
                       (direct - recursive).lpNorm<Eigen::Infinity>());
      Vec u(4);
      for (int v = 0; v < 4; ++v) {
        u[v] = rng.uniform();
      }
      recursive = k.gamma * recursive + k.omega0 * u;
      history.push_back(u);
    }
  }
  const double elapsed = seconds_since(t0);
  report(2, worst <= 1e-12 && elapsed < 1.0,
         "memory convolution agrees with the recursion",
         "worst gap " + format_g(worst, 3));
}

// ---------------------------------------------------------------- 3
void criterion_forced_equilibrium() {
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const auto net = random_small_network(300 + s);
    const int n = net.n_agents;
    Rng rng(900 + s);
    Vec u_bar_s(n), u_bar_l(n);
    for (int v = 0; v < n; ++v) {
      const double rho = net.persistence[v];
      const double headroom = 1.0 - net.inherent_bias[v];
      u_bar_l[v] = rng.uniform(0.0, std::min(1.0, headroom));
      const double slack = headroom - rho * u_bar_l[v];
      u_bar_s[v] =
          rho < 1.0 ? rng.uniform(0.0, std::min(1.0, slack / (1.0 - rho)))
                    : 0.0;
    }
    const auto eq = forced_equilibrium(net, net.persistence, u_bar_s, u_bar_l);
    BudgetLedger ledger(1e15, 0.5);
    const IncentiveInput constant{u_bar_s, u_bar_l};
    const auto traj = simulate_trajectory(
        net, MemoryKernel::iir(3.0),
        [&](const SimState&, int) { return constant; }, 10000, ledger,
        700 + s, Vec::Constant(n, 0.3));
    worst = std::max(
        worst, (traj.states.back().x - eq.x_inf).lpNorm<Eigen::Infinity>());
  }
  report(3, worst <= 1e-8, "constant policies settle at the forced limit",
         "worst gap " + format_g(worst, 3));
}

// ---------------------------------------------------------------- 4
void criterion_spend_down_limit() {
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    const auto net = random_small_network(400 + s);
    const int n = net.n_agents;
    Rng input_rng(500 + s);
    BudgetLedger ledger(1e15, 0.5);
    const int stop = 5;
    const auto traj = simulate_trajectory(
        net, MemoryKernel::iir(3.0),
        [&](const SimState& st, int t) {
          if (t > stop) {
            return IncentiveInput{Vec::Zero(n), Vec::Zero(n)};
          }
          return testing::random_feasible_input(net, st.u_mem, input_rng);
        },
        10000, ledger, 800 + s, Vec::Constant(n, 0.3));
    const auto eq = fj_equilibrium(net, net.inherent_bias);
    worst = std::max(
        worst, (traj.states.back().x - eq.x_inf).lpNorm<Eigen::Infinity>());
  }
  report(4, worst <= 1e-6,
         "after spend-down the state returns to the free limit",
         "worst gap " + format_g(worst, 3));
}

// ---------------------------------------------------------------- 5
void criterion_switch_off() {
  const MemoryKernel iir = MemoryKernel::iir(3.0);
  double worst_iir = 0.0;
  {
    Rng rng(41);
    Vec u_mem = Vec::Zero(3);
    for (int t = 0; t < 8; ++t) {
      Vec u(3);
      for (int v = 0; v < 3; ++v) {
        u[v] = rng.uniform();
      }
      u_mem = iir.gamma * u_mem + iir.omega0 * u;
    }
    const Vec at_off = u_mem;
    for (int m = 1; m <= 50; ++m) {
      u_mem = iir.gamma * u_mem;  // zero input
      worst_iir = std::max(
          worst_iir, (u_mem - std::pow(iir.kappa, m) * at_off)
                         .lpNorm<Eigen::Infinity>());
    }
  }

  bool fir_ok = true;
  Rng rng(43);
  for (int trial = 0; trial < 100 && fir_ok; ++trial) {
    const int window = 2 + static_cast<int>(rng.below(12));
    const MemoryKernel fir = MemoryKernel::fir(rng.uniform(1.0, 6.0), window);
    const int active = 1 + static_cast<int>(rng.below(10));
    std::vector<Vec> history;
    for (int t = 0; t < active; ++t) {
      Vec u(2);
      u << rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0);
      history.push_back(u);
    }
    const Vec last_input = history.back();
    const Vec at_off = memory_convolution(fir, history, 2);
    for (int m = 0; m <= window && fir_ok; ++m) {
      const Vec now = memory_convolution(fir, history, 2);
      const Vec lower = fir.omega0 * std::pow(fir.kappa, m) * last_input;
      fir_ok = fir_ok && ((now - lower).minCoeff() >= -1e-12);
      fir_ok = fir_ok &&
               (now.lpNorm<Eigen::Infinity>() <=
                std::pow(fir.kappa, m) * at_off.lpNorm<Eigen::Infinity>() +
                    1e-12);
      history.push_back(Vec::Zero(2));
    }
  }
  report(5, worst_iir <= 1e-12 && fir_ok,
         "switch-off decay and finite-window envelopes hold",
         "iir gap " + format_g(worst_iir, 3) +
             (fir_ok ? ", fir bounds ok" : ", fir bounds violated"));
}

// ---------------------------------------------------------------- 6
void criterion_augmented_equivalence() {
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    Rng rng(600 + s);
    const auto net = testing::random_network(rng, 6);
    const MemoryKernel k = MemoryKernel::iir(3.0);
    const auto aug = assemble_augmented(net, k);
    SimState state{0, Vec::Constant(6, 0.4), Vec::Zero(6)};
    Vec stacked(12);
    stacked << state.x, state.u_mem;
    for (int t = 0; t < 50; ++t) {
      const auto input = testing::random_feasible_input(net, state.u_mem, rng);
      stacked = aug.a_aug * stacked + aug.b_s * input.u_s +
                aug.b_l * input.u_l + aug.b_o * net.inherent_bias;
      state = step(net, k, state, input);
      worst = std::max(worst,
                       (stacked.head(6) - state.x).lpNorm<Eigen::Infinity>());
      worst = std::max(
          worst, (stacked.tail(6) - state.u_mem).lpNorm<Eigen::Infinity>());
    }
  }
  report(6, worst <= 1e-12, "stacked and flat recursions coincide",
         "worst gap " + format_g(worst, 3));
}

// ---------------------------------------------------------------- 7
void criterion_terminal_certificate() {
  const auto t0 = std::chrono::steady_clock::now();
  GeneratorParams params;  // the reference 112-agent synthetic network
  const auto sn = generate_synthetic_network(params, 1);
  const auto aug = assemble_augmented(sn.net, MemoryKernel::iir(3.0));
  bool pass = false;
  std::string detail;
  try {
    const auto tc = terminal_cost(aug, Mat::Identity(224, 224));
    Eigen::LLT<Mat> llt(tc.certificate.p);
    pass = tc.certificate.residual <= 1e-8 && llt.info() == Eigen::Success;
    detail = "residual " + format_g(tc.certificate.residual, 3);
  } catch (const std::exception& e) {
    detail = e.what();
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 10.0;
  report(7, pass, "stability certificate on the reference network",
         detail + ", " + format_g(elapsed, 3) + " s");
}

// ---------------------------------------------------------------- 8
void criterion_qp_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(4242);
  double worst_gap = 0.0, worst_kkt = 0.0;
  std::vector<QpProblem> problems;
  for (int i = 0; i < 200; ++i) {
    problems.push_back(testing::random_qp(rng));
  }
  std::atomic<size_t> next{0};
  std::mutex mu;
  auto worker = [&]() {
    for (size_t i = next.fetch_add(1); i < problems.size();
         i = next.fetch_add(1)) {
      const QpProblem& p = problems[i];
      const auto sol = solve_qp(p, 1e-9, 1e-9, 200000);
      const Vec reference = testing::pgd_solve(p, 1000000);
      const double gap = std::abs(testing::qp_objective(p, sol.z) -
                                  testing::qp_objective(p, reference));
      const auto kkt = kkt_residuals(p, sol.z, sol.duals);
      const double kmax = std::max(
          {kkt.stationarity, kkt.feasibility, kkt.complementarity});
      std::lock_guard<std::mutex> lock(mu);
      worst_gap = std::max(worst_gap, gap);
      worst_kkt = std::max(worst_kkt, kmax);
    }
  };
  const unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < jobs; ++i) {
    pool.emplace_back(worker);
  }
  for (auto& th : pool) {
    th.join();
  }
  report(8, worst_gap <= 1e-6 && worst_kkt <= 1e-6,
         "splitting solver matches the projected-gradient reference",
         "worst objective gap " + format_g(worst_gap, 3) + ", worst kkt " +
             format_g(worst_kkt, 3) + ", " + format_g(seconds_since(t0), 3) +
             " s");
}

// ------------------------------------------------------------ 9-12
struct SweepOutcome {
  bool ran = false;
  double elapsed = 0.0;
  std::string summary_text;
  std::map<std::string, RunSummary> by_cell;  // key: policy|alpha|rho|beta
  bool invariants_ok = true;
  std::string invariant_detail;
};

std::string cell_key(const std::string& policy, double alpha, double rho,
                     double beta) {
  return policy + "|" + format_g(alpha, 6) + "|" + format_g(rho, 6) + "|" +
         format_g(beta, 6);
}

ScenarioConfig reference_scenario() {
  ScenarioConfig cfg;
  cfg.network.use_generator = true;
  cfg.network.generator = GeneratorParams{};
  cfg.network.generator_seed = 1;
  cfg.beta = 200.0;
  cfg.horizon_T = 11;
  cfg.master_seed = 20240817;
  cfg.mpc.tol_primal = 1e-6;
  cfg.mpc.tol_dual = 1e-6;
  return cfg;
}

void check_trajectory_invariants(const fs::path& dir, SweepOutcome& outcome) {
  std::istringstream in(
      read_text_file((dir / "trajectory.csv").string()));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto f = split_csv_line(line);
    const double x = parse_double(f[2], "x");
    const double u_eff = parse_double(f[6], "u_eff");
    const double remaining = parse_double(f[10], "remaining");
    if (x < -1e-12 || x > 1.0 + 1e-12 || u_eff < -1e-12 ||
        u_eff > 1.0 + 1e-12 || remaining < -1e-9) {
      outcome.invariants_ok = false;
      outcome.invariant_detail = dir.filename().string() + ": " + line;
      return;
    }
  }
}

SweepOutcome run_reference_sweep(const std::string& out_dir) {
  SweepOutcome outcome;
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioConfig base = reference_scenario();
  SweepSpec spec;
  spec.alphas = {0.2, 0.5, 0.8};
  spec.rhos = {0.3, 0.7};
  spec.betas = {200.0, 400.0};
  spec.policies = {"naive", "rh"};
  const auto results = run_sweep(spec, base, out_dir, 0);
  outcome.elapsed = seconds_since(t0);
  outcome.ran = true;
  for (const auto& r : results) {
    if (!r.ok) {
      outcome.invariants_ok = false;
      outcome.invariant_detail = r.cell.id + " failed: " + r.error;
      continue;
    }
    outcome.by_cell[cell_key(r.cell.policy, r.cell.alpha, r.cell.rho,
                             r.cell.beta)] = r.summary;
    if (outcome.invariants_ok) {
      check_trajectory_invariants(
          fs::path(out_dir) / "runs" / r.cell.dir_name, outcome);
    }
  }
  outcome.summary_text =
      read_text_file((fs::path(out_dir) / "summary.csv").string());
  return outcome;
}

void criteria_sweep(const std::string& scratch) {
  const std::string dir_a = scratch + "/sweep_a";
  const std::string dir_b = scratch + "/sweep_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  SweepOutcome a = run_reference_sweep(dir_a);

  report(9, a.invariants_ok && a.elapsed < 180.0,
         "closed-loop sweep keeps states, inputs, and budget in range",
         (a.invariants_ok ? std::string("24 cells clean")
                          : a.invariant_detail) +
             ", " + format_g(a.elapsed, 4) + " s");

  bool ordering = true;
  std::ostringstream detail10;
  for (double beta : {200.0, 400.0}) {
    const auto rh = a.by_cell.find(cell_key("rh", 0.5, 0.7, beta));
    const auto nv = a.by_cell.find(cell_key("naive", 0.5, 0.7, beta));
    if (rh == a.by_cell.end() || nv == a.by_cell.end()) {
      ordering = false;
      detail10 << "missing cells at beta=" << beta << "; ";
      continue;
    }
    ordering = ordering && rh->second.x_bar_t > nv->second.x_bar_t &&
               rh->second.residual_budget < nv->second.residual_budget;
    detail10 << "beta=" << beta << ": x " << format_g(rh->second.x_bar_t, 4)
             << ">" << format_g(nv->second.x_bar_t, 4) << ", r "
             << format_g(rh->second.residual_budget, 4) << "<"
             << format_g(nv->second.residual_budget, 4) << "; ";
  }
  report(10, ordering,
         "receding horizon beats the even split and spends deeper",
         detail10.str());

  bool alpha_effect = true;
  std::ostringstream detail11;
  {
    const auto lo = a.by_cell.find(cell_key("rh", 0.2, 0.7, 200.0));
    const auto hi = a.by_cell.find(cell_key("rh", 0.8, 0.7, 200.0));
    if (lo == a.by_cell.end() || hi == a.by_cell.end()) {
      alpha_effect = false;
    } else {
      alpha_effect = hi->second.u_l_mean > lo->second.u_l_mean &&
                     lo->second.u_s_mean > hi->second.u_s_mean;
      detail11 << "u_l " << format_g(hi->second.u_l_mean, 4) << ">"
               << format_g(lo->second.u_l_mean, 4) << ", u_s "
               << format_g(lo->second.u_s_mean, 4) << ">"
               << format_g(hi->second.u_s_mean, 4);
    }
  }
  report(11, alpha_effect, "spend shifts toward the cheaper channel",
         detail11.str());

  SweepOutcome b = run_reference_sweep(dir_b);
  report(12, a.summary_text == b.summary_text && !a.summary_text.empty(),
         "repeated sweeps are byte-identical",
         b.summary_text == a.summary_text ? "summary tables match"
                                          : "summary tables differ");
}

}  // namespace

int main() {
  const std::string scratch =
      (fs::temp_directory_path() / "nudge_acceptance").string();
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  criterion_open_loop_convergence();
  criterion_memory_equivalence();
  criterion_forced_equilibrium();
  criterion_spend_down_limit();
  criterion_switch_off();
  criterion_augmented_equivalence();
  criterion_terminal_certificate();
  criterion_qp_oracle();
  criteria_sweep(scratch);

  if (failures == 0) {
    std::printf("all criteria passed\n");
  } else {
    std::printf("%d criteria failed\n", failures);
  }
  return failures;
}
