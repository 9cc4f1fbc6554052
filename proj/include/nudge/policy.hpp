#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>

#include "nudge/analysis.hpp"
#include "nudge/budget.hpp"
#include "nudge/common.hpp"
#include "nudge/dynamics.hpp"
#include "nudge/network.hpp"
#include "nudge/qp.hpp"

namespace nudge {

/// Receding-horizon design parameters. Scalar weights expand to
/// scalar*identity of the appropriate size (n for the stage weights,
/// 2n for the terminal weight). q_terminal = 0 disables the terminal cost.
struct MpcConfig {
  int horizon = 10;        // L
  double q_weight = 100.0; // adoption shortfall weight
  double r1_weight = 10.0; // short-term effort weight, must be > 0
  double r2_weight = 10.0; // long-term effort weight, must be > 0
  double q_terminal = 1.0; // Lyapunov right-hand side scale
  double tol_primal = 1e-6;
  double tol_dual = 1e-6;
  int max_iterations = 20000;
  /// Enforce the planned-spend rows in the stricter cumulative form
  /// u$(h) <= U - u$(h-1) instead of u$(h) <= U.
  bool literal_budget_rows = false;
  bool dump_problems = false;
  std::string dump_dir;

  void validate() const;
};

/// Equal split of the budget over agents and steps, with the short-term
/// component capped per agent so the effective input can never leave
/// [0,1]. Agents with persistence 1 get no short-term share (it would have
/// no effect on their input).
std::pair<Vec, Vec> naive_policy(const InfluenceNetwork& net, double beta,
                                 int T);

/// Quadratic terminal penalty built from the discrete Lyapunov solution on
/// the augmented dynamics; decreases along unforced deviations, which makes
/// the receding-horizon loop inherit the open-loop stability.
struct TerminalCost {
  LyapunovCertificate certificate;
  int n = 0;
  Mat p11, p12, p22;

  /// Penalty at terminal state (x_L, u_mem_L): quadratic form of
  /// [1 - x_L; u_mem_L] under the Lyapunov solution.
  double value(const Vec& x_l, const Vec& u_mem_l) const;
};

TerminalCost terminal_cost(const AugmentedModel& aug, const Mat& q_terminal);

struct PolicySchedule {
  Mat u_s_plan;         // L x n
  Mat u_l_plan;         // L x n
  Mat predicted_x;      // (L+1) x n
  Mat predicted_u_mem;  // (L+1) x n
  Vec planned_spend;    // per-stage monetary cost, length L
};

struct RunSummary {
  double x_bar_t = 0.0;     // mean final inclination over agents
  double sigma_x_t = 0.0;   // population std of final inclinations
  double u_s_mean = 0.0;    // mean short-term input over (t, agent)
  double u_l_mean = 0.0;    // mean long-term input over (t, agent)
  double beta = 0.0;
  double residual_budget = 0.0;
};

/// Receding-horizon planner compiled once per scenario: the condensed
/// quadratic cost, constraint structure, and splitting factorizations are
/// shared by all steps; each step only updates the linear term and bounds.
class MpcController {
 public:
  MpcController(const InfluenceNetwork& net, const MemoryKernel& kernel,
                const MpcConfig& cfg, double alpha);
  ~MpcController();
  MpcController(MpcController&&) noexcept;
  MpcController& operator=(MpcController&&) noexcept = delete;

  /// The dense canonical problem for the given state estimate and remaining
  /// budget; identical (including row order) to what plan_step solves.
  QpProblem assemble(const SimState& estimate, double remaining) const;

  struct StepResult {
    IncentiveInput applied;
    PolicySchedule schedule;
    QpSolution diagnostics;
    double clip_magnitude = 0.0;  // max adjustment applied to stage 0
  };

  /// Solves the horizon problem, warm-started from the previous solution
  /// shifted by one stage, and returns the first-stage inputs clipped to
  /// the exact headroom and remaining budget.
  StepResult plan_step(const SimState& estimate, double remaining);

  /// Condensed objective of an arbitrary plan (for optimality comparisons).
  double plan_objective(const SimState& estimate, const Mat& u_s_plan,
                        const Mat& u_l_plan) const;

  const TerminalCost* terminal() const;
  int horizon() const;
  int n_agents() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot versions of the controller operations.
QpProblem assemble_mpc_qp(const SimState& estimate,
                          const InfluenceNetwork& net,
                          const MemoryKernel& kernel, const MpcConfig& cfg,
                          double remaining, double alpha);

MpcController::StepResult mpc_step(const SimState& estimate,
                                   const InfluenceNetwork& net,
                                   const MemoryKernel& kernel,
                                   const MpcConfig& cfg,
                                   const BudgetLedger& ledger, double alpha);

struct RhRunResult {
  Trajectory trajectory;
  BudgetLedger ledger;
  RunSummary summary;
};

/// Closed loop over T steps: observe binary adoptions, update the running
/// estimate, plan, apply the first stage to the true dynamics, charge the
/// ledger. The memory state is controller-internal (it chose the past
/// inputs), so only x is estimated. Deterministic given the seed.
RhRunResult run_receding_horizon(
    const InfluenceNetwork& net, const MemoryKernel& kernel,
    const MpcConfig& cfg, double beta, double alpha, int T, std::uint64_t seed,
    ObservationEstimator::Kind estimator = ObservationEstimator::Kind::kRunningMean,
    double estimator_decay = 0.9, const Vec* x0 = nullptr);

/// Open-loop run of the constant naive policy under the same observation
/// and budget machinery.
RhRunResult run_naive(const InfluenceNetwork& net, const MemoryKernel& kernel,
                      double beta, double alpha, int T, std::uint64_t seed,
                      const Vec* x0 = nullptr);

RunSummary summarize_run(const Trajectory& trajectory,
                         const BudgetLedger& ledger);

/// CSV row set mirroring the comparison-table layout.
std::string summary_csv_header();
std::string summary_csv_row(const std::string& policy, const RunSummary& s,
                            double alpha, double rho, std::uint64_t seed);

}  // namespace nudge
