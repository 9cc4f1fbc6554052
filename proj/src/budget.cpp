#include "nudge/budget.hpp"

#include "nudge/csvio.hpp"

namespace nudge {

BudgetLedger::BudgetLedger(double beta, double alpha)
    : beta_(beta), alpha_(alpha) {
  if (beta < 0.0) {
    throw ConfigError("budget beta must be nonnegative, got " +
                      format_g(beta, 6));
  }
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("conversion factor alpha must lie in [0,1], got " +
                      format_g(alpha, 6));
  }
  if (beta_ <= kDepletionTol) {
    depletion_time_ = 0;
  }
}

double BudgetLedger::step_cost(double alpha, const Vec& u_s, const Vec& u_l) {
  return alpha * u_s.sum() + (1.0 - alpha) * u_l.sum();
}

void BudgetLedger::charge(const Vec& u_s, const Vec& u_l) {
  const double cost = step_cost(alpha_, u_s, u_l);
  const double after = beta_ - (cumulative_ + cost);
  if (after < -kDepletionTol) {
    throw BudgetError("budget exceeded at step " + std::to_string(time()) +
                          ": remaining would be " + format_g(after, 6),
                      time(), -after);
  }
  cumulative_ += cost;
  spends_.push_back(cost);
  if (!depletion_time_ && remaining() <= kDepletionTol) {
    depletion_time_ = time();
  }
}

double cumulative_spend(double alpha, const std::vector<Vec>& u_s_seq,
                        const std::vector<Vec>& u_l_seq) {
  if (u_s_seq.size() != u_l_seq.size()) {
    throw Error("input sequences have different lengths");
  }
  double total = 0.0;
  for (size_t t = 0; t < u_s_seq.size(); ++t) {
    total += BudgetLedger::step_cost(alpha, u_s_seq[t], u_l_seq[t]);
  }
  return total;
}

}  // namespace nudge
