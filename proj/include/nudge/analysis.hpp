#pragma once

#include "nudge/common.hpp"
#include "nudge/network.hpp"

namespace nudge {

struct EquilibriumResult {
  Vec x_inf;        // limit inclinations
  Vec u_inf;        // limit effective input
  double residual;  // ||(I - Lambda P) x_inf - (I - Lambda) u_inf||_inf
};

/// Limit of the opinion update under a constant effective input:
/// x_inf = (I - Lambda P)^{-1} (I - Lambda) u_const, by direct dense
/// factorization. Fails loudly when I - Lambda P is near singular (which
/// means no agent anchors the relevant component).
EquilibriumResult fj_equilibrium(const InfluenceNetwork& net,
                                 const Vec& u_const);

/// Limit under constant short/long-term inputs: the memory trace converges
/// to u_bar_l, so u_inf = u_o + rho.*u_bar_l + (1-rho).*u_bar_s, then the
/// constant-input limit above. Errors when u_inf leaves [0,1]^n.
EquilibriumResult forced_equilibrium(const InfluenceNetwork& net,
                                     const Vec& rho, const Vec& u_bar_s,
                                     const Vec& u_bar_l);

struct LyapunovCertificate {
  Mat p;            // symmetric positive definite solution
  double residual;  // max-abs entry of a' p a - p + q

  /// Blocks of an even-dimensional solution, indexed by the half size.
  Mat p11(int n) const { return p.topLeftCorner(n, n); }
  Mat p12(int n) const { return p.topRightCorner(n, n); }
  Mat p22(int n) const { return p.bottomRightCorner(n, n); }
};

/// Solves a' p a - p = -q for a Schur-stable a and symmetric positive
/// definite q by the doubling iteration p <- p + a' p a, a <- a*a, which
/// converges in O(log) squarings. The result is checked by residual and an
/// attempted Cholesky factorization.
LyapunovCertificate solve_discrete_lyapunov(const Mat& a, const Mat& q,
                                            double increment_tol = 1e-12);

}  // namespace nudge
