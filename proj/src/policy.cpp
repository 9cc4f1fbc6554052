#include "nudge/policy.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "nudge/csvio.hpp"

namespace nudge {

void MpcConfig::validate() const {
  if (horizon < 1) {
    throw ConfigError("mpc horizon must be >= 1, got " +
                      std::to_string(horizon));
  }
  if (q_weight < 0.0 || q_terminal < 0.0) {
    throw ConfigError("mpc state weights must be nonnegative");
  }
  if (!(r1_weight > 0.0) || !(r2_weight > 0.0)) {
    throw ConfigError("mpc effort weights must be positive");
  }
  if (!(tol_primal > 0.0) || !(tol_dual > 0.0) || max_iterations < 1) {
    throw ConfigError("mpc solver tolerances and iteration cap must be "
                      "positive");
  }
}

std::pair<Vec, Vec> naive_policy(const InfluenceNetwork& net, double beta,
                                 int T) {
  if (T < 1) {
    throw Error("naive policy needs T >= 1");
  }
  if (beta < 0.0) {
    throw Error("naive policy needs a nonnegative budget");
  }
  const int n = net.n_agents;
  const double total_slots = static_cast<double>(T) * n;
  const double u_bar = std::min(beta, total_slots) / total_slots;

  Vec u_s(n), u_l = Vec::Constant(n, u_bar);
  for (int v = 0; v < n; ++v) {
    const double rho = net.persistence[v];
    double cap = 0.0;  // persistence 1 leaves the short-term channel inert
    if (rho < 1.0) {
      cap = std::min(
          1.0, std::max(0.0, (1.0 - net.inherent_bias[v] - rho) / (1.0 - rho)));
    }
    u_s[v] = std::min(u_bar, cap);
  }
  return {std::move(u_s), std::move(u_l)};
}

double TerminalCost::value(const Vec& x_l, const Vec& u_mem_l) const {
  const Vec dev = Vec::Ones(n) - x_l;
  return dev.dot(p11 * dev) + u_mem_l.dot(p22 * u_mem_l) +
         2.0 * dev.dot(p12 * u_mem_l);
}

TerminalCost terminal_cost(const AugmentedModel& aug, const Mat& q_terminal) {
  TerminalCost tc;
  tc.certificate = solve_discrete_lyapunov(aug.a_aug, q_terminal);
  tc.n = static_cast<int>(aug.a_aug.rows()) / 2;
  tc.p11 = tc.certificate.p11(tc.n);
  tc.p12 = tc.certificate.p12(tc.n);
  tc.p22 = tc.certificate.p22(tc.n);
  return tc;
}

namespace {

/// Inequality block of the condensed horizon problem. Row order: headroom
/// rows stage-major (h, agent), then the planned-spend rows. The headroom
/// blocks are diagonal, so products are evaluated by stage recursions
/// instead of a stored dense matrix. Every row is normalized to unit
/// Euclidean norm (the bounds are scaled to match), which keeps the
/// splitting duals on one scale; the spend rows are otherwise orders of
/// magnitude heavier than the headroom rows.
///
/// With nonnegative decisions the per-stage cumulative-spend bounds are
/// nested: the final stage's row implies all earlier ones. The solver path
/// therefore keeps only that row (`single_budget_row`), which removes a
/// block of near-parallel rows that all activate together once the budget
/// binds; the canonical materialization keeps the full set.
class HorizonConstraints final : public ConstraintOps {
 public:
  HorizonConstraints(Vec rho, double omega0, double gamma, double alpha,
                     int horizon, bool literal_budget, bool single_budget_row)
      : rho_(std::move(rho)),
        omega0_(omega0),
        gamma_(gamma),
        alpha_(alpha),
        n_(static_cast<int>(rho_.size())),
        horizon_(horizon),
        literal_budget_(literal_budget),
        budget_rows_(single_budget_row ? 1 : horizon) {
    const int n = n_, L = horizon_;
    design_scale_.resize(n * L);
    for (int h = 0; h < L; ++h) {
      for (int v = 0; v < n; ++v) {
        double sq = (1.0 - rho_[v]) * (1.0 - rho_[v]);
        for (int k = 0; k < h; ++k) {
          const double c = rho_[v] * omega0_ * std::pow(gamma_, h - 1 - k);
          sq += c * c;
        }
        design_scale_[h * n + v] = sq > 0.0 ? 1.0 / std::sqrt(sq) : 1.0;
      }
    }
    budget_scale_.resize(budget_rows_);
    for (int j = 0; j < budget_rows_; ++j) {
      const int h = budget_stage(j);
      double sq = 0.0;
      for (int k = 0; k <= h; ++k) {
        const double scale = literal_budget_ && k < h ? 2.0 : 1.0;
        sq += n * (scale * alpha_) * (scale * alpha_) +
              n * (scale * (1.0 - alpha_)) * (scale * (1.0 - alpha_));
      }
      budget_scale_[j] = sq > 0.0 ? 1.0 / std::sqrt(sq) : 1.0;
    }
  }

  double design_scale(int row) const { return design_scale_[row]; }
  double budget_scale(int j) const { return budget_scale_[j]; }
  int budget_rows() const { return budget_rows_; }
  int budget_stage(int j) const {
    return budget_rows_ == horizon_ ? j : horizon_ - 1;
  }

  int rows() const override { return n_ * horizon_ + budget_rows_; }
  int cols() const override { return 2 * n_ * horizon_; }

  void multiply(const Vec& z, Vec& out) const override {
    const int n = n_, L = horizon_, nl = n * L;
    out.resize(rows());
    Vec acc = Vec::Zero(n);  // sum_k gamma^{h-1-k} u_l(k), k < h
    std::vector<double> cum(L + 1, 0.0);
    for (int h = 0; h < L; ++h) {
      if (h > 0) {
        acc = gamma_ * acc + z.segment(nl + (h - 1) * n, n);
      }
      for (int v = 0; v < n; ++v) {
        out[h * n + v] = design_scale_[h * n + v] *
                         ((1.0 - rho_[v]) * z[h * n + v] +
                          rho_[v] * omega0_ * acc[v]);
      }
      cum[h + 1] = cum[h] + alpha_ * z.segment(h * n, n).sum() +
                   (1.0 - alpha_) * z.segment(nl + h * n, n).sum();
    }
    for (int j = 0; j < budget_rows_; ++j) {
      const int h = budget_stage(j);
      out[nl + j] = budget_scale_[j] *
                    (literal_budget_ ? cum[h + 1] + cum[h] : cum[h + 1]);
    }
  }

  void multiply_transpose(const Vec& y, Vec& out) const override {
    const int n = n_, L = horizon_, nl = n * L;
    out = Vec::Zero(cols());
    Vec yd(nl);
    for (int r = 0; r < nl; ++r) {
      yd[r] = design_scale_[r] * y[r];
    }
    // Headroom rows.
    for (int h = 0; h < L; ++h) {
      for (int v = 0; v < n; ++v) {
        out[h * n + v] = (1.0 - rho_[v]) * yd[h * n + v];
      }
    }
    Vec racc = Vec::Zero(n);  // sum_{h>k} gamma^{h-1-k} y_d(h)
    for (int k = L - 2; k >= 0; --k) {
      racc = gamma_ * racc + yd.segment((k + 1) * n, n);
      for (int v = 0; v < n; ++v) {
        out[nl + k * n + v] += rho_[v] * omega0_ * racc[v];
      }
    }
    // Spend rows: stage k collects every kept row whose stage is >= k.
    std::vector<double> stage_weight(L, 0.0);
    for (int j = 0; j < budget_rows_; ++j) {
      const int h = budget_stage(j);
      const double yj = budget_scale_[j] * y[nl + j];
      for (int k = 0; k <= h; ++k) {
        stage_weight[k] += (literal_budget_ && k < h ? 2.0 : 1.0) * yj;
      }
    }
    for (int k = 0; k < L; ++k) {
      out.segment(k * n, n).array() += alpha_ * stage_weight[k];
      out.segment(nl + k * n, n).array() += (1.0 - alpha_) * stage_weight[k];
    }
  }

  Mat gram() const override {
    const int n = n_, L = horizon_, nl = n * L, d = cols();
    Mat gg = Mat::Zero(d, d);
    // Headroom rows have one short-term entry and h long-term entries, all
    // for the same agent.
    std::vector<int> cols_idx(L + 1);
    std::vector<double> vals(L + 1);
    for (int v = 0; v < n; ++v) {
      for (int h = 0; h < L; ++h) {
        const double s = design_scale_[h * n + v];
        int count = 0;
        cols_idx[count] = h * n + v;
        vals[count++] = s * (1.0 - rho_[v]);
        for (int k = 0; k < h; ++k) {
          cols_idx[count] = nl + k * n + v;
          vals[count++] = s * rho_[v] * omega0_ * std::pow(gamma_, h - 1 - k);
        }
        for (int i = 0; i < count; ++i) {
          for (int j = 0; j < count; ++j) {
            gg(cols_idx[i], cols_idx[j]) += vals[i] * vals[j];
          }
        }
      }
    }
    // Spend rows are dense; rank-one updates.
    Vec row(d);
    for (int j = 0; j < budget_rows_; ++j) {
      const int h = budget_stage(j);
      row.setZero();
      for (int k = 0; k <= h; ++k) {
        const double scale = literal_budget_ && k < h ? 2.0 : 1.0;
        row.segment(k * n, n).array() = scale * alpha_;
        row.segment(nl + k * n, n).array() = scale * (1.0 - alpha_);
      }
      gg.selfadjointView<Eigen::Lower>().rankUpdate(
          row, budget_scale_[j] * budget_scale_[j]);
    }
    return Mat(gg.selfadjointView<Eigen::Lower>());
  }

  void row(int r, Vec& out) const override {
    const int n = n_, L = horizon_, nl = n * L;
    out = Vec::Zero(cols());
    if (r < nl) {
      const int h = r / n, v = r % n;
      const double s = design_scale_[r];
      out[h * n + v] = s * (1.0 - rho_[v]);
      for (int k = 0; k < h; ++k) {
        out[nl + k * n + v] =
            s * rho_[v] * omega0_ * std::pow(gamma_, h - 1 - k);
      }
    } else {
      const int j = r - nl;
      const int h = budget_stage(j);
      for (int k = 0; k <= h; ++k) {
        const double scale =
            budget_scale_[j] * (literal_budget_ && k < h ? 2.0 : 1.0);
        out.segment(k * n, n).array() = scale * alpha_;
        out.segment(nl + k * n, n).array() = scale * (1.0 - alpha_);
      }
    }
  }

  /// Dense materialization of exactly the rows this instance holds.
  Mat dense() const {
    const int n = n_, L = horizon_, nl = n * L;
    Mat g = Mat::Zero(rows(), cols());
    for (int h = 0; h < L; ++h) {
      for (int v = 0; v < n; ++v) {
        const double s = design_scale_[h * n + v];
        g(h * n + v, h * n + v) = s * (1.0 - rho_[v]);
        for (int k = 0; k < h; ++k) {
          g(h * n + v, nl + k * n + v) =
              s * rho_[v] * omega0_ * std::pow(gamma_, h - 1 - k);
        }
      }
    }
    for (int j = 0; j < budget_rows_; ++j) {
      const int h = budget_stage(j);
      for (int k = 0; k <= h; ++k) {
        const double scale =
            budget_scale_[j] * (literal_budget_ && k < h ? 2.0 : 1.0);
        g.row(nl + j).segment(k * n, n).array() = scale * alpha_;
        g.row(nl + j).segment(nl + k * n, n).array() =
            scale * (1.0 - alpha_);
      }
    }
    return g;
  }

 private:
  Vec rho_;
  double omega0_, gamma_, alpha_;
  int n_, horizon_;
  bool literal_budget_;
  int budget_rows_;
  std::vector<double> design_scale_;
  std::vector<double> budget_scale_;
};

}  // namespace

struct MpcController::Impl {
  int n = 0, L = 0, d = 0;
  double alpha = 0.0;
  MpcConfig cfg;
  Vec u_o, rho;
  double omega0 = 0.0, gamma = 0.0;

  Mat a_pow_top;  // stacked A^h, h = 1..L (each 2n x 2n)
  Mat s;          // stacked impulse response, 2nL x d
  Vec forcing;    // stacked sum_j A^j * (b_o u_o), stages 1..L
  Mat h_mat;      // condensed hessian (with the factor 2)
  Mat g_lin;      // d x 2n, linear-term dependence on the initial state
  Vec g_const;    // d
  std::shared_ptr<HorizonConstraints> constraints;       // solver rows
  std::shared_ptr<HorizonConstraints> full_constraints;  // canonical rows
  std::unique_ptr<QpEngine> engine;
  std::unique_ptr<TerminalCost> terminal;

  Vec prev_z, prev_duals;
  int solve_count = 0;

  Impl(const InfluenceNetwork& net, const MemoryKernel& kernel,
       const MpcConfig& config, double alpha_in) {
    config.validate();
    cfg = config;
    alpha = alpha_in;
    if (alpha < 0.0 || alpha > 1.0) {
      throw ConfigError("conversion factor alpha must lie in [0,1]");
    }
    n = net.n_agents;
    L = cfg.horizon;
    d = 2 * n * L;
    u_o = net.inherent_bias;
    rho = net.persistence;
    omega0 = kernel.omega0;
    gamma = kernel.gamma;

    const AugmentedModel aug = assemble_augmented(net, kernel);
    const int n2 = 2 * n;
    const Vec force_step = aug.b_o * u_o;

    std::vector<Mat> a_pow(L + 1);
    a_pow[0] = Mat::Identity(n2, n2);
    for (int j = 1; j <= L; ++j) {
      a_pow[j].noalias() = a_pow[j - 1] * aug.a_aug;
    }
    a_pow_top.resize(n2 * L, n2);
    for (int h = 1; h <= L; ++h) {
      a_pow_top.middleRows((h - 1) * n2, n2) = a_pow[h];
    }

    std::vector<Mat> imp_s(L), imp_l(L);
    for (int j = 0; j < L; ++j) {
      imp_s[j].noalias() = a_pow[j] * aug.b_s;
      imp_l[j].noalias() = a_pow[j] * aug.b_l;
    }
    const int nl = n * L;
    s = Mat::Zero(n2 * L, d);
    for (int h = 1; h <= L; ++h) {
      for (int k = 0; k < h; ++k) {
        s.block((h - 1) * n2, k * n, n2, n) = imp_s[h - 1 - k];
        s.block((h - 1) * n2, nl + k * n, n2, n) = imp_l[h - 1 - k];
      }
    }
    forcing = Vec::Zero(n2 * L);
    Vec f = Vec::Zero(n2);
    for (int h = 1; h <= L; ++h) {
      f += a_pow[h - 1] * force_step;
      forcing.segment((h - 1) * n2, n2) = f;
    }

    // Weighted prediction rows: sqrt-weight every stage block once, then a
    // single rank update yields the condensed quadratic.
    Mat w_terminal_half;  // U with U'U = terminal quadratic over [x; m]
    Vec b_terminal = Vec::Zero(n2);
    if (cfg.q_terminal > 0.0) {
      terminal = std::make_unique<TerminalCost>(
          terminal_cost(aug, cfg.q_terminal * Mat::Identity(n2, n2)));
      Mat w_l(n2, n2);
      w_l.topLeftCorner(n, n) = terminal->p11;
      w_l.topRightCorner(n, n) = -terminal->p12;
      w_l.bottomLeftCorner(n, n) = -terminal->p12.transpose();
      w_l.bottomRightCorner(n, n) = terminal->p22;
      Eigen::LLT<Mat> llt(w_l);
      if (llt.info() != Eigen::Success) {
        throw Error("terminal weight failed its Cholesky factorization");
      }
      w_terminal_half = llt.matrixU();
      b_terminal.head(n) = -terminal->p11 * Vec::Ones(n);
      b_terminal.tail(n) = terminal->p12.transpose() * Vec::Ones(n);
    }

    const double sq = std::sqrt(cfg.q_weight);
    const int stage_rows = (L - 1) * n;
    const int c_rows = stage_rows + (terminal ? n2 : 0);
    Mat c(c_rows, d);
    Mat c_a(c_rows, n2);
    for (int h = 1; h < L; ++h) {
      c.middleRows((h - 1) * n, n) = sq * s.middleRows((h - 1) * n2, n);
      c_a.middleRows((h - 1) * n, n) = sq * a_pow[h].topRows(n);
    }
    if (terminal) {
      c.bottomRows(n2).noalias() =
          w_terminal_half * s.middleRows((L - 1) * n2, n2);
      c_a.bottomRows(n2).noalias() = w_terminal_half * a_pow[L];
    }

    h_mat = Mat::Zero(d, d);
    if (c_rows > 0) {
      h_mat.selfadjointView<Eigen::Lower>().rankUpdate(c.transpose(), 2.0);
      h_mat = Mat(h_mat.selfadjointView<Eigen::Lower>());
    }
    for (int i = 0; i < nl; ++i) {
      h_mat(i, i) += 2.0 * cfg.r1_weight;
      h_mat(nl + i, nl + i) += 2.0 * cfg.r2_weight;
    }
    g_lin = c_rows > 0 ? Mat(2.0 * c.transpose() * c_a) : Mat::Zero(d, n2);

    // Constant linear part: stage gradients at the forcing trajectory.
    Vec q_stack = Vec::Zero(n2 * L);
    for (int h = 1; h < L; ++h) {
      q_stack.segment((h - 1) * n2, n) =
          cfg.q_weight *
          (forcing.segment((h - 1) * n2, n) - Vec::Ones(n));
    }
    if (terminal) {
      Mat w_l = w_terminal_half.transpose() * w_terminal_half;
      q_stack.segment((L - 1) * n2, n2) =
          w_l * forcing.segment((L - 1) * n2, n2) + b_terminal;
    }
    g_const = 2.0 * s.transpose() * q_stack;

    constraints = std::make_shared<HorizonConstraints>(
        rho, omega0, gamma, alpha, L, cfg.literal_budget_rows,
        /*single_budget_row=*/true);
    full_constraints = std::make_shared<HorizonConstraints>(
        rho, omega0, gamma, alpha, L, cfg.literal_budget_rows,
        /*single_budget_row=*/false);
    QpSettings settings;
    settings.tol_primal = cfg.tol_primal;
    // Dual residuals live on the cost scale (the stage weights put the
    // condensed gradient in the hundreds), so the stationarity tolerance is
    // relative to it; the primal tolerance stays absolute in input units.
    settings.tol_dual = cfg.tol_dual * std::max(1.0, h_mat.trace() / d);
    settings.max_iterations = cfg.max_iterations;
    engine = std::make_unique<QpEngine>(h_mat, constraints, Vec::Zero(d),
                                        Vec::Ones(d), settings);
  }

  Vec linear_term(const SimState& estimate) const {
    Vec z0(2 * n);
    z0.head(n) = estimate.x;
    z0.tail(n) = estimate.u_mem;
    return g_lin * z0 + g_const;
  }

  Vec bound_vector(const SimState& estimate, double remaining,
                   const HorizonConstraints& c) const {
    Vec h(c.rows());
    for (int stage = 0; stage < L; ++stage) {
      const double decay = std::pow(gamma, stage);
      for (int v = 0; v < n; ++v) {
        h[stage * n + v] =
            c.design_scale(stage * n + v) *
            (1.0 - u_o[v] - rho[v] * decay * estimate.u_mem[v]);
      }
    }
    for (int j = 0; j < c.budget_rows(); ++j) {
      h[n * L + j] = c.budget_scale(j) * remaining;
    }
    return h;
  }

  /// Shifts every L-stage block of n-vectors forward by one stage, zeroing
  /// the final stage; v may hold one channel (n*L) or several.
  Vec shift_stages(const Vec& v) const {
    Vec out = Vec::Zero(v.size());
    const int channels = static_cast<int>(v.size()) / (n * L);
    for (int c = 0; c < channels; ++c) {
      const int base = c * n * L;
      for (int h = 0; h + 1 < L; ++h) {
        out.segment(base + h * n, n) = v.segment(base + (h + 1) * n, n);
      }
    }
    return out;
  }
};

MpcController::MpcController(const InfluenceNetwork& net,
                             const MemoryKernel& kernel, const MpcConfig& cfg,
                             double alpha)
    : impl_(std::make_unique<Impl>(net, kernel, cfg, alpha)) {}

MpcController::~MpcController() = default;
MpcController::MpcController(MpcController&&) noexcept = default;

int MpcController::horizon() const { return impl_->L; }
int MpcController::n_agents() const { return impl_->n; }
const TerminalCost* MpcController::terminal() const {
  return impl_->terminal.get();
}

QpProblem MpcController::assemble(const SimState& estimate,
                                  double remaining) const {
  const Impl& im = *impl_;
  if (estimate.x.size() != im.n || estimate.u_mem.size() != im.n) {
    throw Error("state estimate dimension disagrees with the network");
  }
  if (remaining < 0.0) {
    throw Error("remaining budget must be nonnegative");
  }
  QpProblem p;
  p.hessian = im.h_mat;
  p.linear = im.linear_term(estimate);
  p.ineq_matrix = im.full_constraints->dense();
  p.ineq_bound = im.bound_vector(estimate, remaining, *im.full_constraints);
  p.lower = Vec::Zero(im.d);
  p.upper = Vec::Ones(im.d);
  return p;
}

MpcController::StepResult MpcController::plan_step(const SimState& estimate,
                                                   double remaining) {
  Impl& im = *impl_;
  if (estimate.x.size() != im.n || estimate.u_mem.size() != im.n) {
    throw Error("state estimate dimension disagrees with the network");
  }
  if (remaining < 0.0) {
    throw Error("remaining budget must be nonnegative");
  }
  const int n = im.n, L = im.L, nl = n * L;
  const int budget_rows = im.constraints->budget_rows();

  const Vec g = im.linear_term(estimate);
  const Vec bounds = im.bound_vector(estimate, remaining, *im.constraints);

  QpWarmStart warm;
  const QpWarmStart* warm_ptr = nullptr;
  if (im.prev_z.size() == im.d) {
    warm.z = im.shift_stages(im.prev_z);
    warm.duals_full.resize(im.d + nl + budget_rows);
    warm.duals_full.head(im.d) = im.shift_stages(im.prev_duals.head(im.d));
    warm.duals_full.segment(im.d, nl) =
        im.shift_stages(im.prev_duals.segment(im.d, nl));
    warm.duals_full.tail(budget_rows) = im.prev_duals.tail(budget_rows);
    warm_ptr = &warm;
  }

  StepResult result;
  result.diagnostics = im.engine->solve(g, bounds, warm_ptr);
  if (result.diagnostics.status == QpStatus::kInfeasible) {
    throw Error("horizon problem reported infeasible, which cannot happen "
                "with a nonnegative remaining budget");
  }
  Vec z = result.diagnostics.z;
  if (result.diagnostics.status == QpStatus::kMaxIterations) {
    const double feas = result.diagnostics.primal_residual;
    std::cerr << "warning: horizon solve hit the iteration cap (primal "
              << format_g(feas, 3) << ", dual "
              << format_g(result.diagnostics.dual_residual, 3) << ")";
    if (feas > 10.0 * im.cfg.tol_primal) {
      std::cerr << "; applying zero input";
      z.setZero();
    }
    std::cerr << "\n";
  }
  im.prev_z = z;
  im.prev_duals = result.diagnostics.duals_full;

  // Planned schedule and predicted trajectory at the solution.
  PolicySchedule& sched = result.schedule;
  sched.u_s_plan.resize(L, n);
  sched.u_l_plan.resize(L, n);
  sched.planned_spend.resize(L);
  for (int h = 0; h < L; ++h) {
    sched.u_s_plan.row(h) = z.segment(h * n, n).transpose();
    sched.u_l_plan.row(h) = z.segment(nl + h * n, n).transpose();
    sched.planned_spend[h] = im.alpha * sched.u_s_plan.row(h).sum() +
                             (1.0 - im.alpha) * sched.u_l_plan.row(h).sum();
  }
  Vec z0(2 * n);
  z0.head(n) = estimate.x;
  z0.tail(n) = estimate.u_mem;
  Vec pred = im.forcing + im.s * z;
  pred.noalias() += im.a_pow_top * z0;
  sched.predicted_x.resize(L + 1, n);
  sched.predicted_u_mem.resize(L + 1, n);
  sched.predicted_x.row(0) = estimate.x.transpose();
  sched.predicted_u_mem.row(0) = estimate.u_mem.transpose();
  for (int h = 1; h <= L; ++h) {
    sched.predicted_x.row(h) =
        pred.segment((h - 1) * 2 * n, n).transpose();
    sched.predicted_u_mem.row(h) =
        pred.segment((h - 1) * 2 * n + n, n).transpose();
  }

  // First stage, clipped to the exact headroom and to the remaining budget.
  // The long-term cap keeps the induced memory inside its own headroom
  // (rho * u_mem(t+1) <= 1 - u_o), which the solver only met to tolerance.
  Vec u_s = sched.u_s_plan.row(0).transpose();
  Vec u_l = sched.u_l_plan.row(0).transpose();
  double clip = 0.0;
  for (int v = 0; v < n; ++v) {
    const double rho_v = im.rho[v];
    const double m_v = estimate.u_mem[v];
    double s_cap = 0.0;
    if (rho_v < 1.0) {
      s_cap = std::min(1.0, std::max(0.0, (1.0 - im.u_o[v] - rho_v * m_v) /
                                              (1.0 - rho_v)));
    }
    double l_cap = 1.0;
    if (rho_v > 0.0 && im.omega0 > 0.0) {
      l_cap = std::min(
          1.0, std::max(0.0, ((1.0 - im.u_o[v]) / rho_v - im.gamma * m_v) /
                                 im.omega0));
    }
    const double s_new = std::min(std::max(u_s[v], 0.0), s_cap);
    const double l_new = std::min(std::max(u_l[v], 0.0), l_cap);
    clip = std::max({clip, std::abs(s_new - u_s[v]), std::abs(l_new - u_l[v])});
    u_s[v] = s_new;
    u_l[v] = l_new;
  }
  const double cost = BudgetLedger::step_cost(im.alpha, u_s, u_l);
  if (cost > remaining) {
    const double scale = cost > 0.0 ? remaining / cost : 0.0;
    clip = std::max(clip, cost - remaining);
    u_s *= scale;
    u_l *= scale;
  }
  if (clip > 10.0 * im.cfg.tol_primal) {
    std::cerr << "warning: first-stage input clipped by " << format_g(clip, 3)
              << " to respect headroom/budget\n";
  }
  result.clip_magnitude = clip;
  result.applied = {std::move(u_s), std::move(u_l)};

  if (im.cfg.dump_problems && !im.cfg.dump_dir.empty()) {
    std::filesystem::create_directories(im.cfg.dump_dir);
    dump_qp(assemble(estimate, remaining),
            im.cfg.dump_dir + "/qp_solve" + std::to_string(im.solve_count) +
                ".txt");
  }
  ++im.solve_count;
  return result;
}

double MpcController::plan_objective(const SimState& estimate,
                                     const Mat& u_s_plan,
                                     const Mat& u_l_plan) const {
  const Impl& im = *impl_;
  const int n = im.n, L = im.L, nl = n * L;
  if (u_s_plan.rows() != L || u_s_plan.cols() != n ||
      u_l_plan.rows() != L || u_l_plan.cols() != n) {
    throw Error("plan shape must be horizon x n_agents");
  }
  Vec z(im.d);
  for (int h = 0; h < L; ++h) {
    z.segment(h * n, n) = u_s_plan.row(h).transpose();
    z.segment(nl + h * n, n) = u_l_plan.row(h).transpose();
  }
  const Vec g = im.linear_term(estimate);
  return 0.5 * z.dot(im.h_mat * z) + g.dot(z);
}

QpProblem assemble_mpc_qp(const SimState& estimate,
                          const InfluenceNetwork& net,
                          const MemoryKernel& kernel, const MpcConfig& cfg,
                          double remaining, double alpha) {
  return MpcController(net, kernel, cfg, alpha).assemble(estimate, remaining);
}

MpcController::StepResult mpc_step(const SimState& estimate,
                                   const InfluenceNetwork& net,
                                   const MemoryKernel& kernel,
                                   const MpcConfig& cfg,
                                   const BudgetLedger& ledger, double alpha) {
  MpcController controller(net, kernel, cfg, alpha);
  return controller.plan_step(estimate, ledger.remaining());
}

RhRunResult run_receding_horizon(const InfluenceNetwork& net,
                                 const MemoryKernel& kernel,
                                 const MpcConfig& cfg, double beta,
                                 double alpha, int T, std::uint64_t seed,
                                 ObservationEstimator::Kind estimator_kind,
                                 double estimator_decay, const Vec* x0) {
  if (T < 1) {
    throw Error("closed-loop horizon must be at least 1");
  }
  const int n = net.n_agents;
  MpcController controller(net, kernel, cfg, alpha);
  BudgetLedger ledger(beta, alpha);
  ObservationEstimator estimator(estimator_kind, estimator_decay);

  Trajectory traj;
  SimState state{0, x0 ? *x0 : net.inherent_bias, Vec::Zero(n)};
  traj.states.push_back(state);
  traj.remaining.push_back(ledger.remaining());

  for (int t = 0; t < T; ++t) {
    const Vec y = sample_observation(state.x, seed, t);
    estimator.update(y);
    traj.y.push_back(y);
    traj.mu.push_back(estimator.mean());

    // The memory trace is controller-internal state (the controller chose
    // every past long-term input), so only x comes from the estimator.
    SimState estimate{t, estimator.mean(), state.u_mem};
    auto planned = controller.plan_step(estimate, ledger.remaining());

    const Vec u = effective_input(net.inherent_bias, net.persistence,
                                  state.u_mem, planned.applied.u_s);
    ledger.charge(planned.applied.u_s, planned.applied.u_l);

    SimState next = step(net, kernel, state, planned.applied);
    traj.inputs.push_back(std::move(planned.applied));
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

  RunSummary summary = summarize_run(traj, ledger);
  return {std::move(traj), std::move(ledger), summary};
}

RhRunResult run_naive(const InfluenceNetwork& net, const MemoryKernel& kernel,
                      double beta, double alpha, int T, std::uint64_t seed,
                      const Vec* x0) {
  const auto [u_s, u_l] = naive_policy(net, beta, T);
  BudgetLedger ledger(beta, alpha);
  const IncentiveInput constant{u_s, u_l};
  Trajectory traj = simulate_trajectory(
      net, kernel, [&constant](const SimState&, int) { return constant; }, T,
      ledger, seed, x0 ? *x0 : net.inherent_bias);
  RunSummary summary = summarize_run(traj, ledger);
  return {std::move(traj), std::move(ledger), summary};
}

RunSummary summarize_run(const Trajectory& trajectory,
                         const BudgetLedger& ledger) {
  if (trajectory.states.empty()) {
    throw Error("cannot summarize an empty trajectory");
  }
  const Vec& x_final = trajectory.states.back().x;
  const int n = static_cast<int>(x_final.size());
  RunSummary s;
  s.x_bar_t = x_final.mean();
  s.sigma_x_t =
      std::sqrt((x_final.array() - s.x_bar_t).square().sum() / n);
  double sum_s = 0.0, sum_l = 0.0;
  for (const auto& input : trajectory.inputs) {
    sum_s += input.u_s.sum();
    sum_l += input.u_l.sum();
  }
  const double cells =
      std::max<size_t>(1, trajectory.inputs.size()) * static_cast<double>(n);
  s.u_s_mean = sum_s / cells;
  s.u_l_mean = sum_l / cells;
  s.beta = ledger.beta();
  s.residual_budget = ledger.beta() - ledger.cumulative_spend();
  return s;
}

std::string summary_csv_header() {
  return "policy,x_bar_T,sigma_x_T,u_s_mean,u_l_mean,beta,residual_budget,"
         "alpha,rho,seed";
}

std::string summary_csv_row(const std::string& policy, const RunSummary& s,
                            double alpha, double rho, std::uint64_t seed) {
  std::ostringstream out;
  out << policy << ',' << format_g(s.x_bar_t, 12) << ','
      << format_g(s.sigma_x_t, 12) << ',' << format_g(s.u_s_mean, 12) << ','
      << format_g(s.u_l_mean, 12) << ',' << format_g(s.beta, 12) << ','
      << format_g(s.residual_budget, 12) << ',' << format_g(alpha, 12) << ','
      << format_g(rho, 12) << ',' << seed;
  return out.str();
}

}  // namespace nudge
