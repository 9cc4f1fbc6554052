#include "nudge/analysis.hpp"

#include <cmath>

#include "nudge/csvio.hpp"

namespace nudge {

namespace {

constexpr double kConditionLimit = 1e12;

EquilibriumResult solve_equilibrium(const InfluenceNetwork& net,
                                    const Vec& u_inf) {
  const int n = net.n_agents;
  const Mat system =
      Mat::Identity(n, n) - net.susceptibility.asDiagonal() * net.influence;
  const Vec rhs = (Vec::Ones(n) - net.susceptibility).cwiseProduct(u_inf);

  Eigen::PartialPivLU<Mat> lu(system);
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / kConditionLimit)) {
    throw Error(
        "I - Lambda P is numerically singular (estimated condition above " +
        format_g(kConditionLimit, 3) +
        "); some component has no agent with susceptibility < 1");
  }

  EquilibriumResult result;
  result.x_inf = lu.solve(rhs);
  result.u_inf = u_inf;
  result.residual = (system * result.x_inf - rhs).lpNorm<Eigen::Infinity>();
  return result;
}

}  // namespace

EquilibriumResult fj_equilibrium(const InfluenceNetwork& net,
                                 const Vec& u_const) {
  if (u_const.size() != net.n_agents) {
    throw Error("u_const size mismatch");
  }
  return solve_equilibrium(net, u_const);
}

EquilibriumResult forced_equilibrium(const InfluenceNetwork& net,
                                     const Vec& rho, const Vec& u_bar_s,
                                     const Vec& u_bar_l) {
  const int n = net.n_agents;
  if (rho.size() != n || u_bar_s.size() != n || u_bar_l.size() != n) {
    throw Error("forced_equilibrium input size mismatch");
  }
  const Vec u_inf = net.inherent_bias + rho.cwiseProduct(u_bar_l) +
                    (Vec::Ones(n) - rho).cwiseProduct(u_bar_s);
  for (int v = 0; v < n; ++v) {
    if (u_inf[v] < 0.0 || u_inf[v] > 1.0) {
      throw HeadroomError(
          "limit effective input leaves [0,1] at agent " + std::to_string(v) +
              " (value " + format_g(u_inf[v], 6) + ")",
          {v}, {u_inf[v] < 0.0 ? -u_inf[v] : u_inf[v] - 1.0});
    }
  }
  return solve_equilibrium(net, u_inf);
}

LyapunovCertificate solve_discrete_lyapunov(const Mat& a, const Mat& q,
                                            double increment_tol) {
  if (a.rows() != a.cols() || q.rows() != q.cols() || a.rows() != q.rows()) {
    throw Error("Lyapunov equation needs square matrices of equal size");
  }
  const double q_asym = (q - q.transpose()).lpNorm<Eigen::Infinity>();
  if (q_asym > 1e-12 * std::max(1.0, q.lpNorm<Eigen::Infinity>())) {
    throw Error("Lyapunov right-hand side q is not symmetric (asymmetry " +
                format_g(q_asym, 6) + ")");
  }
  const double radius = spectral_radius(a, 1e-10, 10000);
  if (radius >= 1.0) {
    throw Error("Lyapunov equation needs a Schur-stable matrix; spectral "
                "radius estimate is " +
                format_g(radius, 12));
  }

  // p accumulates sum_k (a^T)^k q a^k; squaring a doubles the partial sum.
  Mat p = q;
  Mat power = a;
  const int max_doublings = 200;
  for (int k = 0; k < max_doublings; ++k) {
    const Mat increment = power.transpose() * p * power;
    p += increment;
    if (increment.lpNorm<Eigen::Infinity>() <= increment_tol) {
      break;
    }
    if (k + 1 == max_doublings) {
      throw ConvergenceError("Lyapunov doubling iteration did not converge",
                             increment.lpNorm<Eigen::Infinity>(), k + 1);
    }
    power = power * power;
  }
  p = 0.5 * (p + p.transpose());

  LyapunovCertificate cert;
  cert.residual =
      (a.transpose() * p * a - p + q).lpNorm<Eigen::Infinity>();
  cert.p = std::move(p);

  Eigen::LLT<Mat> llt(cert.p);
  if (llt.info() != Eigen::Success) {
    throw Error("Lyapunov solution failed the positive-definiteness "
                "factorization check");
  }
  return cert;
}

}  // namespace nudge
