#include "nudge/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "nudge/csvio.hpp"

namespace nudge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInfeasTol = 1e-7;

double inf_norm(const Vec& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

}  // namespace

void QpProblem::validate() const {
  const int d = dim();
  if (hessian.rows() != d || hessian.cols() != d) {
    throw Error("hessian shape disagrees with the linear term");
  }
  const double scale = std::max(1.0, inf_norm(linear));
  const double asym =
      (hessian - hessian.transpose()).lpNorm<Eigen::Infinity>();
  if (asym > 1e-12 * std::max(scale, hessian.lpNorm<Eigen::Infinity>())) {
    throw Error("hessian is not symmetric (asymmetry " + format_g(asym, 6) +
                ")");
  }
  if (lower.size() != d || upper.size() != d) {
    throw Error("box bounds shape disagrees with the problem dimension");
  }
  for (int i = 0; i < d; ++i) {
    if (std::isnan(lower[i]) || std::isnan(upper[i]) || lower[i] > upper[i]) {
      throw Error("empty or invalid box at coordinate " + std::to_string(i));
    }
  }
  if (ineq_matrix.rows() != n_ineq() ||
      (n_ineq() > 0 && ineq_matrix.cols() != d)) {
    throw Error("inequality block shape mismatch");
  }
}

Mat DenseConstraints::gram() const {
  const int d = cols();
  Mat gg = Mat::Zero(d, d);
  gg.selfadjointView<Eigen::Lower>().rankUpdate(g_.transpose());
  return Mat(gg.selfadjointView<Eigen::Lower>());
}

QpEngine::QpEngine(Mat hessian, std::shared_ptr<const ConstraintOps> constraints,
                   Vec lower, Vec upper, QpSettings settings)
    : hessian_(std::move(hessian)),
      constraints_(std::move(constraints)),
      lower_(std::move(lower)),
      upper_(std::move(upper)),
      settings_(std::move(settings)) {
  const int d = static_cast<int>(hessian_.rows());
  gram_ = constraints_->rows() > 0 ? constraints_->gram() : Mat::Zero(d, d);
  gram_.diagonal().array() += 1.0;  // box rows contribute the identity
}

const Eigen::LLT<Mat>& QpEngine::factor(double penalty) const {
  auto it = factors_.find(penalty);
  if (it == factors_.end()) {
    Mat k = hessian_ + penalty * gram_;
    k.diagonal().array() += settings_.sigma;
    auto llt = std::make_unique<Eigen::LLT<Mat>>(k);
    if (llt->info() != Eigen::Success) {
      throw Error("splitting system factorization failed; hessian is not "
                  "positive semidefinite");
    }
    it = factors_.emplace(penalty, std::move(llt)).first;
  }
  return *it->second;
}

// Finishes a nearly converged solve exactly: fixes the box coordinates and
// inequality rows the splitting duals mark as active, solves the reduced
// equality-constrained system, and accepts the result only if it satisfies
// the full first-order conditions at the requested tolerances.
bool QpEngine::polish(const Vec& linear, const Vec& ineq_bound, const Vec& y,
                      QpSolution* out) const {
  const int d = static_cast<int>(hessian_.rows());
  const int m = constraints_->rows();
  const double eps_active = 1e-9 * std::max(1.0, inf_norm(y));

  std::vector<int> free_idx;
  Vec z_pol(d);
  for (int i = 0; i < d; ++i) {
    if (y[i] < -eps_active && lower_[i] > -kInf) {
      z_pol[i] = lower_[i];
    } else if (y[i] > eps_active && upper_[i] < kInf) {
      z_pol[i] = upper_[i];
    } else {
      free_idx.push_back(i);
      z_pol[i] = 0.0;
    }
  }
  std::vector<int> active_rows;
  for (int r = 0; r < m; ++r) {
    if (y[d + r] > eps_active) {
      active_rows.push_back(r);
    }
  }
  const int f = static_cast<int>(free_idx.size());
  const int na = static_cast<int>(active_rows.size());
  const int k = f + na;
  if (k == 0 || k > (3 * d) / 4 + 8) {
    return false;  // no reduction to exploit yet
  }

  Mat g_active(na, d);
  Vec row_buf(d);
  for (int r = 0; r < na; ++r) {
    constraints_->row(active_rows[r], row_buf);
    g_active.row(r) = row_buf.transpose();
  }

  Mat kkt = Mat::Zero(k, k);
  Vec rhs(k);
  for (int a = 0; a < f; ++a) {
    for (int b = 0; b < f; ++b) {
      kkt(a, b) = hessian_(free_idx[a], free_idx[b]);
    }
  }
  // rhs_free = -g_F - H_{F,fixed} z_fixed, assembled via a full product.
  const Vec hz_fixed = hessian_ * z_pol;
  for (int a = 0; a < f; ++a) {
    rhs[a] = -linear[free_idx[a]] - hz_fixed[free_idx[a]];
  }
  for (int r = 0; r < na; ++r) {
    double fixed_part = 0.0;
    for (int i = 0; i < d; ++i) {
      fixed_part += g_active(r, i) * z_pol[i];
    }
    for (int a = 0; a < f; ++a) {
      kkt(f + r, a) = g_active(r, free_idx[a]);
      kkt(a, f + r) = g_active(r, free_idx[a]);
    }
    rhs[f + r] = ineq_bound[active_rows[r]] - fixed_part;
  }
  Mat kkt_reg = kkt;
  for (int a = 0; a < f; ++a) {
    kkt_reg(a, a) += 1e-11;
  }
  for (int r = 0; r < na; ++r) {
    kkt_reg(f + r, f + r) -= 1e-11;
  }
  Eigen::PartialPivLU<Mat> lu(kkt_reg);
  Vec sol_vec = lu.solve(rhs);
  sol_vec += lu.solve(rhs - kkt * sol_vec);  // one refinement round

  for (int a = 0; a < f; ++a) {
    z_pol[free_idx[a]] = sol_vec[a];
  }
  Vec duals = Vec::Zero(m);
  for (int r = 0; r < na; ++r) {
    duals[active_rows[r]] = sol_vec[f + r];
  }

  // Full-problem optimality check.
  const double tol_p = settings_.tol_primal;
  const double tol_d = settings_.tol_dual;
  double rp = 0.0;
  for (int i = 0; i < d; ++i) {
    rp = std::max(rp, lower_[i] - z_pol[i]);
    rp = std::max(rp, z_pol[i] - upper_[i]);
  }
  Vec gz(m);
  if (m > 0) {
    constraints_->multiply(z_pol, gz);
    for (int r = 0; r < m; ++r) {
      rp = std::max(rp, gz[r] - ineq_bound[r]);
    }
  }
  if (rp > tol_p) {
    return false;
  }
  Vec stationarity = hessian_ * z_pol + linear;
  if (m > 0) {
    Vec aty(d);
    constraints_->multiply_transpose(duals, aty);
    stationarity += aty;
  }
  double rd = 0.0;
  for (int i = 0; i < d; ++i) {
    const double s = stationarity[i];
    const bool at_lo = lower_[i] > -kInf && z_pol[i] <= lower_[i] + 1e-12;
    const bool at_up = upper_[i] < kInf && z_pol[i] >= upper_[i] - 1e-12;
    if (at_lo && at_up) {
      continue;
    }
    if (at_lo) {
      rd = std::max(rd, -s);
    } else if (at_up) {
      rd = std::max(rd, s);
    } else {
      rd = std::max(rd, std::abs(s));
    }
  }
  for (int r = 0; r < na; ++r) {
    rd = std::max(rd, -duals[active_rows[r]]);
  }
  if (rd > tol_d) {
    return false;
  }

  out->z = z_pol;
  for (int i = 0; i < d; ++i) {
    out->z[i] = std::min(std::max(out->z[i], lower_[i]), upper_[i]);
  }
  out->objective = 0.5 * out->z.dot(hessian_ * out->z) + linear.dot(out->z);
  out->status = QpStatus::kOptimal;
  out->primal_residual = std::max(rp, 0.0);
  out->dual_residual = rd;
  out->duals = duals;
  out->duals_full.resize(d + m);
  out->duals_full.head(d) = -stationarity;
  out->duals_full.tail(m) = duals;
  return true;
}

QpSolution QpEngine::solve(const Vec& linear, const Vec& ineq_bound,
                           const QpWarmStart* warm) const {
  const int d = static_cast<int>(hessian_.rows());
  const int m = constraints_->rows();
  const int total = d + m;
  const QpSettings& cfg = settings_;

  auto clamp_box = [&](Vec& v) {
    for (int i = 0; i < d; ++i) {
      v[i] = std::min(std::max(v[i], lower_[i]), upper_[i]);
    }
  };

  Vec z = (warm && warm->z.size() == d) ? warm->z : Vec::Zero(d);
  clamp_box(z);
  Vec y = (warm && warm->duals_full.size() == total) ? warm->duals_full
                                                     : Vec::Zero(total);

  Vec gz(m);
  if (m > 0) {
    constraints_->multiply(z, gz);
  }
  Vec w(total);
  w.head(d) = z;
  w.tail(m) = gz;
  for (int i = 0; i < d; ++i) {
    w[i] = std::min(std::max(w[i], lower_[i]), upper_[i]);
  }
  for (int i = 0; i < m; ++i) {
    w[d + i] = std::min(w[d + i], ineq_bound[i]);
  }

  double penalty = adapted_penalty_ > 0.0 ? adapted_penalty_ : cfg.penalty;
  const Eigen::LLT<Mat>* llt = &factor(penalty);

  Vec rhs(d), zt(d), gzt(m), scaled(m), aty(d), dual_vec(d), dy(total),
      y_prev(total), candidate(total);
  Vec best_z = z, best_y = y;
  double best_score = kInf, best_rp = kInf, best_rd = kInf;

  QpSolution sol;
  sol.status = QpStatus::kMaxIterations;

  int iter = 0;
  int last_polish = 0;
  for (iter = 1; iter <= cfg.max_iterations; ++iter) {
    const bool check = (iter % cfg.check_interval == 0) ||
                       iter == cfg.max_iterations;
    if (check) {
      y_prev = y;
    }

    // Proximal linear solve.
    rhs = cfg.sigma * z - linear + (penalty * w.head(d) - y.head(d));
    if (m > 0) {
      scaled = penalty * w.tail(m) - y.tail(m);
      constraints_->multiply_transpose(scaled, aty);
      rhs += aty;
    }
    zt = llt->solve(rhs);
    if (m > 0) {
      constraints_->multiply(zt, gzt);
    }

    // Relaxed splitting update and projection onto the constraint sets.
    const double a = cfg.relaxation;
    candidate.head(d) = a * zt + (1.0 - a) * w.head(d);
    candidate.tail(m) = a * gzt + (1.0 - a) * w.tail(m);
    z = a * zt + (1.0 - a) * z;
    gz = a * gzt + (1.0 - a) * gz;
    for (int i = 0; i < d; ++i) {
      const double v = candidate[i] + y[i] / penalty;
      const double proj = std::min(std::max(v, lower_[i]), upper_[i]);
      y[i] += penalty * (candidate[i] - proj);
      w[i] = proj;
    }
    for (int i = 0; i < m; ++i) {
      const double v = candidate[d + i] + y[d + i] / penalty;
      const double proj = std::min(v, ineq_bound[i]);
      y[d + i] += penalty * (candidate[d + i] - proj);
      w[d + i] = proj;
    }

    if (!check) {
      continue;
    }

    // Residuals of the original problem at the current iterate.
    double rp = 0.0;
    for (int i = 0; i < d; ++i) {
      rp = std::max(rp, std::abs(z[i] - w[i]));
    }
    for (int i = 0; i < m; ++i) {
      rp = std::max(rp, std::abs(gz[i] - w[d + i]));
    }
    dual_vec.noalias() = hessian_ * z;
    dual_vec += linear + y.head(d);
    if (m > 0) {
      constraints_->multiply_transpose(y.tail(m), aty);
      dual_vec += aty;
    }
    const double rd = inf_norm(dual_vec);

    if (cfg.callback) {
      const double obj = 0.5 * z.dot(hessian_ * z) + linear.dot(z);
      cfg.callback(iter, z, obj, rp, rd);
    }

    const double score = std::max(rp, rd);
    if (score < best_score) {
      best_score = score;
      best_rp = rp;
      best_rd = rd;
      best_z = z;
      best_y = y;
    }

    if (rp <= cfg.tol_primal && rd <= cfg.tol_dual) {
      sol.status = QpStatus::kOptimal;
      best_z = z;
      best_y = y;
      best_rp = rp;
      best_rd = rd;
      break;
    }

    // Long solves that are close: guess the active set and finish exactly.
    if (cfg.polish && iter >= 100 && iter - last_polish >= 100 &&
        rp <= 1e4 * cfg.tol_primal && rd <= 1e4 * cfg.tol_dual) {
      last_polish = iter;
      if (polish(linear, ineq_bound, y, &sol)) {
        adapted_penalty_ = penalty;
        sol.iterations = iter;
        return sol;
      }
    }

    // Primal infeasibility certificate from the dual update direction.
    dy = y - y_prev;
    const double ny = inf_norm(dy);
    if (ny > 1e-10) {
      aty = dy.head(d);
      if (m > 0) {
        constraints_->multiply_transpose(dy.tail(m), dual_vec);
        aty += dual_vec;
      }
      bool certificate = inf_norm(aty) <= kInfeasTol * ny;
      double support = 0.0;
      for (int i = 0; i < d && certificate; ++i) {
        const double dp = std::max(dy[i], 0.0);
        const double dm = std::min(dy[i], 0.0);
        if (upper_[i] == kInf) {
          certificate = dp <= kInfeasTol * ny;
        } else {
          support += upper_[i] * dp;
        }
        if (lower_[i] == -kInf) {
          certificate = certificate && dm >= -kInfeasTol * ny;
        } else {
          support += lower_[i] * dm;
        }
      }
      for (int i = 0; i < m && certificate; ++i) {
        support += ineq_bound[i] * std::max(dy[d + i], 0.0);
        certificate = std::min(dy[d + i], 0.0) >= -kInfeasTol * ny;
      }
      if (certificate && support <= -kInfeasTol * ny) {
        sol.status = QpStatus::kInfeasible;
        best_z = z;
        best_y = y;
        best_rp = rp;
        best_rd = rd;
        break;
      }
    }

    // Residual balancing: move the penalty toward the point where both
    // residuals shrink at the same rate, quantized to powers of two so
    // repeated solves keep hitting the factorization cache.
    if (iter % cfg.adapt_interval == 0 && rp > 0.0 && rd > 0.0) {
      const double ratio =
          std::min(16.0, std::max(1.0 / 16.0, std::sqrt(rp / rd)));
      double next = penalty * ratio;
      next = std::exp2(std::round(std::log2(next)));
      next = std::min(1e6, std::max(1e-6, next));
      if (next != penalty) {
        penalty = next;
        llt = &factor(penalty);
      }
    }
  }

  adapted_penalty_ = penalty;
  sol.iterations = std::min(iter, cfg.max_iterations);
  sol.z = best_z;
  for (int i = 0; i < d; ++i) {
    sol.z[i] = std::min(std::max(sol.z[i], lower_[i]), upper_[i]);
  }
  sol.objective = 0.5 * sol.z.dot(hessian_ * sol.z) + linear.dot(sol.z);
  sol.primal_residual = best_rp;
  sol.dual_residual = best_rd;
  sol.duals_full = best_y;
  sol.duals = best_y.tail(m);
  return sol;
}

QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings,
                    const QpWarmStart* warm) {
  problem.validate();
  QpEngine engine(problem.hessian,
                  std::make_shared<DenseConstraints>(problem.ineq_matrix),
                  problem.lower, problem.upper, settings);
  return engine.solve(problem.linear, problem.ineq_bound, warm);
}

QpSolution solve_qp(const QpProblem& problem, double tol_primal,
                    double tol_dual, int max_iterations) {
  QpSettings settings;
  settings.tol_primal = tol_primal;
  settings.tol_dual = tol_dual;
  settings.max_iterations = max_iterations;
  return solve_qp(problem, settings);
}

KktResiduals kkt_residuals(const QpProblem& problem, const Vec& z,
                           const Vec& duals) {
  const int d = problem.dim();
  const int m = problem.n_ineq();
  if (z.size() != d || duals.size() != m) {
    throw Error("kkt_residuals dimension mismatch");
  }

  Vec s = problem.hessian * z + problem.linear;
  if (m > 0) {
    s += problem.ineq_matrix.transpose() * duals;
  }

  KktResiduals r{0.0, 0.0, 0.0};
  for (int i = 0; i < d; ++i) {
    const double lo = problem.lower[i];
    const double up = problem.upper[i];
    const double atol_lo = 1e-9 * (1.0 + std::abs(lo));
    const double atol_up = 1e-9 * (1.0 + std::abs(up));
    const bool at_lo = lo > -kInf && z[i] <= lo + atol_lo;
    const bool at_up = up < kInf && z[i] >= up - atol_up;
    double stat;
    if (at_lo && at_up) {
      stat = 0.0;  // pinned coordinate supports any multiplier
    } else if (at_lo) {
      stat = std::max(0.0, -s[i]);
    } else if (at_up) {
      stat = std::max(0.0, s[i]);
    } else {
      stat = std::abs(s[i]);
    }
    r.stationarity = std::max(r.stationarity, stat);
    if (lo > -kInf) {
      r.feasibility = std::max(r.feasibility, lo - z[i]);
    }
    if (up < kInf) {
      r.feasibility = std::max(r.feasibility, z[i] - up);
    }
  }
  if (m > 0) {
    const Vec slack = problem.ineq_matrix * z - problem.ineq_bound;
    for (int i = 0; i < m; ++i) {
      r.feasibility = std::max(r.feasibility, slack[i]);
      r.stationarity = std::max(r.stationarity, -std::min(duals[i], 0.0));
      r.complementarity =
          std::max(r.complementarity, std::abs(duals[i] * slack[i]));
    }
  }
  r.feasibility = std::max(r.feasibility, 0.0);
  return r;
}

void dump_qp(const QpProblem& problem, const std::string& path) {
  std::ostringstream out;
  auto emit = [&out](const char* name, const Mat& m) {
    out << "%%block " << name << " array real " << m.rows() << ' ' << m.cols()
        << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        out << format_exact(m(i, j)) << (j + 1 < m.cols() ? ' ' : '\n');
      }
    }
  };
  emit("hessian", problem.hessian);
  emit("linear", problem.linear);
  emit("ineq_matrix", problem.ineq_matrix);
  emit("ineq_bound", problem.ineq_bound);
  emit("lower", problem.lower);
  emit("upper", problem.upper);
  write_text_file(path, out.str());
}

}  // namespace nudge
