#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "nudge/analysis.hpp"
#include "nudge/config.hpp"
#include "nudge/csvio.hpp"
#include "nudge/dynamics.hpp"
#include "nudge/policy.hpp"
#include "nudge/sweep.hpp"

namespace fs = std::filesystem;
using namespace nudge;

namespace {

struct GlobalOpts {
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 0;
  bool dump_qp = false;
};

ScenarioConfig load(const std::string& path, const GlobalOpts& g) {
  ScenarioConfig cfg = parse_config(path);
  if (g.seed) {
    cfg.master_seed = *g.seed;
  }
  if (!g.out.empty()) {
    cfg.output_dir = g.out;
  }
  if (g.dump_qp) {
    cfg.mpc.dump_problems = true;
    cfg.mpc.dump_dir = cfg.output_dir;
  }
  return cfg;
}

void write_single_run(const ScenarioConfig& cfg, const std::string& policy,
                      double rho_col, const RhRunResult& run) {
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  write_text_file((dir / "config.json").string(), serialize_config(cfg));
  write_trajectory_csv(run.trajectory, (dir / "trajectory.csv").string());
  write_timeseries_csv(run.trajectory, (dir / "timeseries.csv").string());
  write_text_file((dir / "summary.csv").string(),
                  summary_csv_header() + "\n" +
                      summary_csv_row(policy, run.summary, cfg.alpha, rho_col,
                                      cfg.master_seed) +
                      "\n");
  std::cout << summary_csv_header() << "\n"
            << summary_csv_row(policy, run.summary, cfg.alpha, rho_col,
                               cfg.master_seed)
            << "\n";
}

int run_validate(const std::string& config_path, const GlobalOpts& g) {
  const ScenarioConfig cfg = load(config_path, g);
  cfg.mpc.validate();
  const SyntheticNetwork sn = resolve_network(cfg);
  const ValidationReport report = validate_network(sn.net);
  if (!report.passed()) {
    std::cerr << "error: network validation failed:\n" << report.to_string();
    return 1;
  }
  std::cout << "ok: config and network valid (" << sn.net.n_agents
            << " agents, " << sn.net.edges.size() << " edges)\n";
  return 0;
}

int run_simulate(const std::string& config_path, const GlobalOpts& g,
                 double fixed_us, double fixed_ul) {
  const ScenarioConfig cfg = load(config_path, g);
  const SyntheticNetwork sn = resolve_network(cfg);
  const MemoryKernel kernel = make_kernel(cfg);
  const int n = sn.net.n_agents;
  BudgetLedger ledger(cfg.beta, cfg.alpha);
  const IncentiveInput constant{Vec::Constant(n, fixed_us),
                                Vec::Constant(n, fixed_ul)};
  const Vec x0 = cfg.x0_scalar ? Vec::Constant(n, *cfg.x0_scalar)
                               : sn.net.inherent_bias;
  Trajectory traj = simulate_trajectory(
      sn.net, kernel, [&constant](const SimState&, int) { return constant; },
      cfg.horizon_T, ledger, cfg.master_seed, x0);
  RhRunResult run{std::move(traj), std::move(ledger), {}};
  run.summary = summarize_run(run.trajectory, run.ledger);
  write_single_run(cfg, "fixed", sn.net.persistence.mean(), run);
  return 0;
}

int run_design(const std::string& config_path, const GlobalOpts& g,
               const std::string& policy) {
  const ScenarioConfig cfg = load(config_path, g);
  const SyntheticNetwork sn = resolve_network(cfg);
  const MemoryKernel kernel = make_kernel(cfg);
  const Vec x0 = cfg.x0_scalar
                     ? Vec::Constant(sn.net.n_agents, *cfg.x0_scalar)
                     : sn.net.inherent_bias;
  RhRunResult run =
      policy == "rh"
          ? run_receding_horizon(sn.net, kernel, cfg.mpc, cfg.beta, cfg.alpha,
                                 cfg.horizon_T, cfg.master_seed,
                                 cfg.estimator_kind, cfg.estimator_decay, &x0)
          : run_naive(sn.net, kernel, cfg.beta, cfg.alpha, cfg.horizon_T,
                      cfg.master_seed, &x0);
  write_single_run(cfg, policy, sn.net.persistence.mean(), run);
  return 0;
}

int run_sweep_cmd(const std::string& config_path,
                  const std::string& sweep_path, const GlobalOpts& g) {
  const ScenarioConfig cfg = load(config_path, g);
  const SweepSpec spec = parse_sweep(sweep_path);
  const auto results = run_sweep(spec, cfg, cfg.output_dir, g.jobs);
  int failed = 0;
  for (const auto& r : results) {
    if (!r.ok) {
      ++failed;
      std::cerr << "cell failed: " << r.cell.id << ": " << r.error << "\n";
    }
  }
  std::cout << "sweep finished: " << results.size() - failed << "/"
            << results.size() << " cells ok, artifacts under "
            << cfg.output_dir << "\n";
  return failed == 0 ? 0 : 1;
}

int run_equilibrium(const std::string& config_path, const GlobalOpts& g,
                    std::optional<double> us, std::optional<double> ul) {
  const ScenarioConfig cfg = load(config_path, g);
  const SyntheticNetwork sn = resolve_network(cfg);
  const int n = sn.net.n_agents;
  EquilibriumResult eq;
  if (us || ul) {
    eq = forced_equilibrium(sn.net, sn.net.persistence,
                            Vec::Constant(n, us.value_or(0.0)),
                            Vec::Constant(n, ul.value_or(0.0)));
  } else {
    eq = fj_equilibrium(sn.net, sn.net.inherent_bias);
  }
  std::cout << "agent_id,x_inf,u_inf\n";
  for (int v = 0; v < n; ++v) {
    std::cout << v << ',' << format_g(eq.x_inf[v], 12) << ','
              << format_g(eq.u_inf[v], 12) << "\n";
  }
  std::cout << "# residual," << format_g(eq.residual, 6) << "\n";
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    std::ostringstream out;
    out << "agent_id,x_inf,u_inf\n";
    for (int v = 0; v < n; ++v) {
      out << v << ',' << format_g(eq.x_inf[v], 12) << ','
          << format_g(eq.u_inf[v], 12) << "\n";
    }
    write_text_file((fs::path(cfg.output_dir) / "equilibrium.csv").string(),
                    out.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opinion-dynamics incentive design toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  std::uint64_t seed_value = 0;
  auto* seed_opt =
      app.add_option("--seed", seed_value, "Override the master seed");
  app.add_option("--out", g.out, "Override the output directory");
  app.add_option("--jobs", g.jobs,
                 "Parallel sweep cells (default: hardware threads)");
  app.add_flag("--dump-qp", g.dump_qp,
               "Dump each horizon problem for offline debugging");

  std::string config_path, sweep_path, run_dir, policy = "rh";
  double fixed_us = 0.0, fixed_ul = 0.0;
  std::optional<double> eq_us, eq_ul;

  auto* validate =
      app.add_subcommand("validate", "Check a config and its network");
  validate->fallthrough();
  validate->add_option("config", config_path)->required();

  auto* simulate = app.add_subcommand(
      "simulate", "Open-loop run with fixed (possibly zero) inputs");
  simulate->fallthrough();
  simulate->add_option("config", config_path)->required();
  simulate->add_option("--u-s", fixed_us, "Constant short-term input");
  simulate->add_option("--u-l", fixed_ul, "Constant long-term input");

  auto* design =
      app.add_subcommand("design", "Closed-loop policy design run");
  design->fallthrough();
  design->add_option("config", config_path)->required();
  design->add_option("--policy", policy, "naive or rh")
      ->check(CLI::IsMember({"naive", "rh"}));

  auto* sweep = app.add_subcommand("sweep", "Cartesian parameter sweep");
  sweep->fallthrough();
  sweep->add_option("config", config_path)->required();
  sweep->add_option("sweepspec", sweep_path)->required();

  auto* equilibrium = app.add_subcommand(
      "equilibrium", "Constant-input limit reports");
  equilibrium->fallthrough();
  equilibrium->add_option("config", config_path)->required();
  equilibrium->add_option("--u-s", eq_us, "Constant short-term input");
  equilibrium->add_option("--u-l", eq_ul, "Constant long-term input");

  auto* report = app.add_subcommand(
      "report", "Rebuild the combined summary from a run directory");
  report->fallthrough();
  report->add_option("run_dir", run_dir)->required();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) {
    g.seed = seed_value;
  }

  try {
    if (*validate) {
      return run_validate(config_path, g);
    }
    if (*simulate) {
      return run_simulate(config_path, g, fixed_us, fixed_ul);
    }
    if (*design) {
      return run_design(config_path, g, policy);
    }
    if (*sweep) {
      return run_sweep_cmd(config_path, sweep_path, g);
    }
    if (*equilibrium) {
      return run_equilibrium(config_path, g, eq_us, eq_ul);
    }
    if (*report) {
      std::cout << report_run_dir(run_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
