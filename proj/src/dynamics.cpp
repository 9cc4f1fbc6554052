#include "nudge/dynamics.hpp"

#include <cmath>
#include <sstream>

#include "nudge/csvio.hpp"
#include "nudge/rng.hpp"

namespace nudge {

namespace {

void require_size(const Vec& v, int n, const char* name) {
  if (v.size() != n) {
    throw Error(std::string(name) + " has size " + std::to_string(v.size()) +
                ", expected " + std::to_string(n));
  }
}

}  // namespace

MemoryKernel MemoryKernel::iir(double tau) {
  if (!(tau > 0.0)) {
    throw ConfigError("memory time scale tau must be positive, got " +
                      format_g(tau, 6));
  }
  MemoryKernel k;
  k.variant = KernelVariant::kIir;
  k.tau = tau;
  k.kappa = std::exp(-1.0 / tau);
  k.gamma = k.kappa;
  k.omega0 = 1.0 - k.kappa;
  k.window = 0;
  return k;
}

MemoryKernel MemoryKernel::fir(double tau, int window) {
  if (!(tau > 0.0)) {
    throw ConfigError("memory time scale tau must be positive, got " +
                      format_g(tau, 6));
  }
  if (window < 0) {
    throw ConfigError("memory window must be nonnegative, got " +
                      std::to_string(window));
  }
  MemoryKernel k;
  k.variant = KernelVariant::kFir;
  k.tau = tau;
  k.kappa = std::exp(-1.0 / tau);
  k.gamma = k.kappa;
  k.window = window;
  k.omega0 = (1.0 - k.kappa) / (1.0 - std::pow(k.kappa, window + 1));
  return k;
}

double kernel_weight(const MemoryKernel& kernel, int j) {
  if (j < 0) {
    throw Error("kernel weight index must be nonnegative");
  }
  if (kernel.variant == KernelVariant::kFir && j > kernel.window) {
    throw Error("weight index " + std::to_string(j) +
                " exceeds the FIR window " + std::to_string(kernel.window));
  }
  return kernel.omega0 * std::pow(kernel.kappa, j);
}

Vec memory_convolution(const MemoryKernel& kernel,
                       const std::vector<Vec>& history, int n_agents) {
  Vec u_mem = Vec::Zero(n_agents);
  const int t = static_cast<int>(history.size());
  int span = t;
  if (kernel.variant == KernelVariant::kFir) {
    span = std::min(span, kernel.window + 1);
  }
  for (int j = 0; j < span; ++j) {
    const Vec& u_l = history[t - 1 - j];
    require_size(u_l, n_agents, "history entry");
    u_mem += kernel_weight(kernel, j) * u_l;
  }
  return u_mem;
}

Vec effective_input(const Vec& u_o, const Vec& rho, const Vec& u_mem,
                    const Vec& u_s, double tol) {
  const int n = static_cast<int>(u_o.size());
  require_size(rho, n, "rho");
  require_size(u_mem, n, "u_mem");
  require_size(u_s, n, "u_s");

  std::vector<int> agents;
  std::vector<double> margins;
  Vec u(n);
  for (int v = 0; v < n; ++v) {
    const double boost = rho[v] * u_mem[v] + (1.0 - rho[v]) * u_s[v];
    const double headroom = 1.0 - u_o[v];
    if (boost < -tol || boost > headroom + tol) {
      agents.push_back(v);
      margins.push_back(boost < 0.0 ? -boost : boost - headroom);
    }
    u[v] = u_o[v] + boost;
  }
  if (!agents.empty()) {
    std::ostringstream ss;
    ss << "input headroom violated for " << agents.size() << " agent(s):";
    for (size_t i = 0; i < agents.size() && i < 8; ++i) {
      ss << " [" << agents[i] << "] margin " << format_g(margins[i], 6);
    }
    if (agents.size() > 8) {
      ss << " ...";
    }
    throw HeadroomError(ss.str(), std::move(agents), std::move(margins));
  }
  return u;
}

SimState step(const InfluenceNetwork& net, const MemoryKernel& kernel,
              const SimState& state, const IncentiveInput& input) {
  if (kernel.variant != KernelVariant::kIir) {
    throw Error("step() uses the one-step memory recursion, which only the "
                "IIR kernel admits; simulate FIR kernels by convolution");
  }
  const int n = net.n_agents;
  require_size(state.x, n, "state.x");
  require_size(state.u_mem, n, "state.u_mem");
  require_size(input.u_s, n, "input.u_s");
  require_size(input.u_l, n, "input.u_l");

  const Vec u = effective_input(net.inherent_bias, net.persistence,
                                state.u_mem, input.u_s);
  SimState next;
  next.t = state.t + 1;
  next.x = net.susceptibility.asDiagonal() * (net.influence * state.x) +
           (Vec::Ones(n) - net.susceptibility).cwiseProduct(u);
  next.u_mem = kernel.gamma * state.u_mem + kernel.omega0 * input.u_l;
  return next;
}

AugmentedModel assemble_augmented(const InfluenceNetwork& net,
                                  const MemoryKernel& kernel) {
  if (kernel.variant != KernelVariant::kIir) {
    throw Error("the augmented model relies on the IIR weight recursion; "
                "FIR kernels are unsupported here");
  }
  const int n = net.n_agents;
  const Vec receptivity = Vec::Ones(n) - net.susceptibility;

  AugmentedModel m;
  m.a_aug = Mat::Zero(2 * n, 2 * n);
  m.a_aug.topLeftCorner(n, n) =
      net.susceptibility.asDiagonal() * net.influence;
  m.a_aug.topRightCorner(n, n) =
      receptivity.cwiseProduct(net.persistence).asDiagonal();
  m.a_aug.bottomRightCorner(n, n) = kernel.gamma * Mat::Identity(n, n);

  m.b_s = Mat::Zero(2 * n, n);
  m.b_s.topRows(n) =
      receptivity.cwiseProduct(Vec::Ones(n) - net.persistence).asDiagonal();

  m.b_l = Mat::Zero(2 * n, n);
  m.b_l.bottomRows(n) = kernel.omega0 * Mat::Identity(n, n);

  m.b_o = Mat::Zero(2 * n, n);
  m.b_o.topRows(n) = receptivity.asDiagonal();
  return m;
}

Vec sample_observation(const Vec& x, std::uint64_t seed, int t) {
  const int n = static_cast<int>(x.size());
  Vec y(n);
  const std::uint64_t base =
      seed_combine(seed, 0xb5297a4d ^ static_cast<std::uint64_t>(t));
  for (int v = 0; v < n; ++v) {
    const std::uint64_t bits =
        splitmix64(seed_combine(base, static_cast<std::uint64_t>(v)));
    const double draw = static_cast<double>(bits >> 11) * 0x1.0p-53;
    y[v] = draw < x[v] ? 1.0 : 0.0;
  }
  return y;
}

Vec estimate_inclination(const std::vector<Vec>& observations) {
  if (observations.empty()) {
    throw Error("cannot estimate inclinations from an empty sequence");
  }
  Vec mu = Vec::Zero(observations.front().size());
  for (const Vec& y : observations) {
    require_size(y, static_cast<int>(mu.size()), "observation");
    mu += y;
  }
  return mu / static_cast<double>(observations.size());
}

void ObservationEstimator::update(const Vec& y) {
  if (count_ == 0) {
    mu_ = y;
  } else if (kind_ == Kind::kRunningMean) {
    mu_ += (y - mu_) / static_cast<double>(count_ + 1);
  } else {
    mu_ = decay_ * mu_ + (1.0 - decay_) * y;
  }
  ++count_;
}

Trajectory simulate_trajectory(const InfluenceNetwork& net,
                               const MemoryKernel& kernel,
                               const InputPolicy& policy, int T,
                               BudgetLedger& ledger, std::uint64_t seed,
                               const Vec& x0) {
  if (T < 1) {
    throw Error("simulation horizon must be at least 1, got " +
                std::to_string(T));
  }
  const int n = net.n_agents;
  require_size(x0, n, "x0");

  Trajectory traj;
  traj.states.reserve(T + 1);
  SimState state{0, x0, Vec::Zero(n)};
  traj.states.push_back(state);
  traj.remaining.push_back(ledger.remaining());

  ObservationEstimator estimator;
  std::vector<Vec> long_term_history;  // FIR path only

  for (int t = 0; t < T; ++t) {
    const Vec y = sample_observation(state.x, seed, t);
    estimator.update(y);
    traj.y.push_back(y);
    traj.mu.push_back(estimator.mean());

    IncentiveInput input = policy(state, t);
    require_size(input.u_s, n, "policy u_s");
    require_size(input.u_l, n, "policy u_l");

    const Vec u = effective_input(net.inherent_bias, net.persistence,
                                  state.u_mem, input.u_s);
    ledger.charge(input.u_s, input.u_l);

    SimState next;
    next.t = t + 1;
    next.x = net.susceptibility.asDiagonal() * (net.influence * state.x) +
             (Vec::Ones(n) - net.susceptibility).cwiseProduct(u);
    if (kernel.variant == KernelVariant::kIir) {
      next.u_mem = kernel.gamma * state.u_mem + kernel.omega0 * input.u_l;
    } else {
      long_term_history.push_back(input.u_l);
      next.u_mem = memory_convolution(kernel, long_term_history, n);
    }

    traj.inputs.push_back(std::move(input));
    traj.u_eff.push_back(u);
    traj.spend.push_back(ledger.spend_history().back());
    traj.remaining.push_back(ledger.remaining());
    traj.states.push_back(next);
    state = std::move(next);
  }

  const Vec y = sample_observation(state.x, seed, T);
  estimator.update(y);
  traj.y.push_back(y);
  traj.mu.push_back(estimator.mean());
  return traj;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ostringstream out;
  out << "t,agent_id,x,u_mem,u_s,u_l,u_effective,y,mu,spend,remaining\n";
  const int T = traj.horizon();
  const int n = traj.n_agents();
  for (int t = 0; t <= T; ++t) {
    const bool has_input = t < T;
    for (int v = 0; v < n; ++v) {
      out << t << ',' << v << ',' << format_g(traj.states[t].x[v], 12) << ','
          << format_g(traj.states[t].u_mem[v], 12) << ','
          << format_g(has_input ? traj.inputs[t].u_s[v] : 0.0, 12) << ','
          << format_g(has_input ? traj.inputs[t].u_l[v] : 0.0, 12) << ','
          << format_g(has_input ? traj.u_eff[t][v] : 0.0, 12) << ','
          << format_g(traj.y[t][v], 12) << ',' << format_g(traj.mu[t][v], 12)
          << ',' << format_g(has_input ? traj.spend[t] : 0.0, 12) << ','
          << format_g(traj.remaining[t], 12) << '\n';
    }
  }
  write_text_file(path, out.str());
}

void write_timeseries_csv(const Trajectory& traj, const std::string& path) {
  std::ostringstream out;
  const int T = traj.horizon();
  const int n = traj.n_agents();
  out << "t";
  for (const char* q : {"x", "u_s", "u_l", "u_mem"}) {
    for (int v = 0; v < n; ++v) {
      out << ',' << q << '_' << v;
    }
    out << ',' << q << "_mean";
  }
  out << '\n';
  for (int t = 0; t <= T; ++t) {
    const bool has_input = t < T;
    const Vec zero = Vec::Zero(n);
    const Vec& x = traj.states[t].x;
    const Vec& us = has_input ? traj.inputs[t].u_s : zero;
    const Vec& ul = has_input ? traj.inputs[t].u_l : zero;
    const Vec& um = traj.states[t].u_mem;
    out << t;
    for (const Vec* q : {&x, &us, &ul, &um}) {
      for (int v = 0; v < n; ++v) {
        out << ',' << format_g((*q)[v], 12);
      }
      out << ',' << format_g(q->mean(), 12);
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace nudge
