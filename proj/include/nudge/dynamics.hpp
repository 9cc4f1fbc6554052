#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nudge/budget.hpp"
#include "nudge/common.hpp"
#include "nudge/network.hpp"

namespace nudge {

enum class KernelVariant { kIir, kFir };

/// Exponentially decaying memory-weight family. The IIR variant weights the
/// whole past, omega_j = (1-kappa)*kappa^j, and admits the one-step
/// recursion u_mem' = gamma*u_mem + omega0*u_l with gamma = kappa. The FIR
/// variant renormalizes the same weights over a finite window of size
/// window+1 so they sum to one.
struct MemoryKernel {
  KernelVariant variant = KernelVariant::kIir;
  double tau = 3.0;
  double kappa = 0.0;   // e^{-1/tau}
  int window = 0;       // J, FIR only
  double omega0 = 0.0;  // weight of the most recent input
  double gamma = 0.0;   // weight decay ratio

  static MemoryKernel iir(double tau);
  static MemoryKernel fir(double tau, int window);
};

/// Weight omega_j of the input applied j+1 steps ago.
double kernel_weight(const MemoryKernel& kernel, int j);

/// Direct evaluation of the memory trace from a history of long-term
/// inputs (oldest first): u_mem(t) = sum_j omega_j * u_l(t-j-1) with
/// t = history.size(). Serves as the oracle for the recursive update.
Vec memory_convolution(const MemoryKernel& kernel,
                       const std::vector<Vec>& history, int n_agents);

struct SimState {
  int t = 0;
  Vec x;      // latent inclinations in [0,1]^n
  Vec u_mem;  // decaying trace of past long-term inputs, in [0,1]^n
};

struct IncentiveInput {
  Vec u_s;  // short-term, on-off component
  Vec u_l;  // long-term, structural component
};

/// Effective input u = u_o + rho.*u_mem + (1-rho).*u_s. Components whose
/// headroom bound rho.*u_mem + (1-rho).*u_s <= 1-u_o is violated beyond
/// `tol` raise HeadroomError (listing agents and margins) instead of being
/// clipped; clipping here would mask policy bugs.
Vec effective_input(const Vec& u_o, const Vec& rho, const Vec& u_mem,
                    const Vec& u_s, double tol = 1e-9);

/// One step of the opinion update with the IIR memory recursion:
/// x' = Lambda*P*x + (I-Lambda)*u(t), u_mem' = gamma*u_mem + omega0*u_l.
SimState step(const InfluenceNetwork& net, const MemoryKernel& kernel,
              const SimState& state, const IncentiveInput& input);

/// Stacked model over [x; u_mem] equivalent to step(). The long-term input
/// feeds the memory block only: by the memory definition an input applied
/// at t first reaches x at t+2, so the top block of b_l is zero.
struct AugmentedModel {
  Mat a_aug;  // 2n x 2n, block upper triangular
  Mat b_s;    // 2n x n
  Mat b_l;    // 2n x n
  Mat b_o;    // 2n x n
};

AugmentedModel assemble_augmented(const InfluenceNetwork& net,
                                  const MemoryKernel& kernel);

/// Binary adoption events: independent per-agent Bernoulli draws with mean
/// x. The stream for (seed, t, agent) is stateless, so results do not
/// depend on evaluation order.
Vec sample_observation(const Vec& x, std::uint64_t seed, int t);

/// Componentwise arithmetic mean of a nonempty observation sequence.
Vec estimate_inclination(const std::vector<Vec>& observations);

/// Constant-memory estimator of the mean inclination from binary events.
class ObservationEstimator {
 public:
  enum class Kind { kRunningMean, kLeaky };

  explicit ObservationEstimator(Kind kind = Kind::kRunningMean,
                                double decay = 0.9)
      : kind_(kind), decay_(decay) {}

  void update(const Vec& y);
  const Vec& mean() const { return mu_; }
  int count() const { return count_; }

 private:
  Kind kind_;
  double decay_;
  int count_ = 0;
  Vec mu_;
};

/// Closed record of one run: states 0..T, inputs 0..T-1, observations and
/// estimates 0..T, per-step spend and remaining budget.
struct Trajectory {
  std::vector<SimState> states;
  std::vector<IncentiveInput> inputs;
  std::vector<Vec> u_eff;
  std::vector<Vec> y;
  std::vector<Vec> mu;
  std::vector<double> spend;
  std::vector<double> remaining;

  int horizon() const { return static_cast<int>(inputs.size()); }
  int n_agents() const {
    return states.empty() ? 0 : static_cast<int>(states.front().x.size());
  }
};

/// Produces the inputs to apply at step t given the current state.
using InputPolicy = std::function<IncentiveInput(const SimState&, int)>;

/// Runs T steps from x(0), charging the ledger each step. IIR kernels use
/// the recursion; FIR kernels keep the input history and evaluate the
/// convolution directly. Deterministic given the seed.
Trajectory simulate_trajectory(const InfluenceNetwork& net,
                               const MemoryKernel& kernel,
                               const InputPolicy& policy, int T,
                               BudgetLedger& ledger, std::uint64_t seed,
                               const Vec& x0);

/// Long CSV, one row per (t, agent): x, u_mem, u_s, u_l, u_effective, y,
/// mu, then the ledger columns spend and remaining. 12 significant digits.
void write_trajectory_csv(const Trajectory& traj, const std::string& path);

/// Wide CSV with per-agent and agent-mean columns for x, u_s, u_l, u_mem.
void write_timeseries_csv(const Trajectory& traj, const std::string& path);

}  // namespace nudge
