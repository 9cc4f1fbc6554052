#pragma once

#include <optional>
#include <vector>

#include "nudge/common.hpp"

namespace nudge {

/// Tracks spend against a fixed allocation. One ledger belongs to exactly
/// one run; remaining budget U(t) = beta - cumulative spend must stay
/// nonnegative, and the first time it hits zero is recorded.
class BudgetLedger {
 public:
  BudgetLedger(double beta, double alpha);

  double beta() const { return beta_; }
  double alpha() const { return alpha_; }

  /// Monetary cost of applying (u_s, u_l) for one step:
  /// sum_v alpha*u_s[v] + (1-alpha)*u_l[v].
  static double step_cost(double alpha, const Vec& u_s, const Vec& u_l);

  /// Records one step of spend; throws BudgetError if the remaining budget
  /// would drop below -1e-9.
  void charge(const Vec& u_s, const Vec& u_l);

  /// Cumulative spend over the steps recorded so far.
  double cumulative_spend() const { return cumulative_; }

  /// Remaining budget U(t) = beta - cumulative spend.
  double remaining() const { return beta_ - cumulative_; }

  /// Number of steps recorded.
  int time() const { return static_cast<int>(spends_.size()); }

  const std::vector<double>& spend_history() const { return spends_; }

  /// First step index at which the remaining budget reached zero, if any.
  std::optional<int> depletion_time() const { return depletion_time_; }

  /// Slack distinguishing exact exhaustion from floating-point residue.
  static constexpr double kDepletionTol = 1e-9;

 private:
  double beta_;
  double alpha_;
  double cumulative_ = 0.0;
  std::vector<double> spends_;
  std::optional<int> depletion_time_;
};

/// Spend accumulated by a sequence of inputs applied at steps 0..t-1.
double cumulative_spend(double alpha, const std::vector<Vec>& u_s_seq,
                        const std::vector<Vec>& u_l_seq);

}  // namespace nudge
