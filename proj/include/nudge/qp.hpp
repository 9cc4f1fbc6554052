#pragma once

#include <functional>
#include <map>
#include <memory>

#include "nudge/common.hpp"

namespace nudge {

/// Convex quadratic program in the canonical form
///   min 1/2 z'Hz + g'z   s.t.  G z <= h,  lower <= z <= upper.
/// Box entries may be +-infinity.
struct QpProblem {
  Mat hessian;
  Vec linear;
  Mat ineq_matrix;
  Vec ineq_bound;
  Vec lower;
  Vec upper;

  int dim() const { return static_cast<int>(linear.size()); }
  int n_ineq() const { return static_cast<int>(ineq_bound.size()); }

  /// Throws unless H is symmetric (1e-12), dimensions agree, and the box
  /// is nonempty.
  void validate() const;
};

enum class QpStatus { kOptimal, kMaxIterations, kInfeasible };

struct QpSolution {
  Vec z;
  double objective = 0.0;
  QpStatus status = QpStatus::kMaxIterations;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  Vec duals;       // multipliers of the G z <= h rows
  Vec duals_full;  // splitting duals over [box rows; G rows], for warm starts
};

struct QpSettings {
  double tol_primal = 1e-8;
  double tol_dual = 1e-8;
  int max_iterations = 50000;
  double sigma = 1e-8;      // proximal regularization of the linear solve
  double penalty = 1.0;     // initial splitting penalty
  int check_interval = 5;   // residual evaluation period
  int adapt_interval = 25;  // residual-balancing period
  double relaxation = 1.6;
  /// Once residuals are near tolerance on a long-running solve, guess the
  /// active set and finish with one exact KKT solve.
  bool polish = true;
  /// Invoked at every residual check with (iteration, iterate, objective,
  /// primal residual, dual residual).
  std::function<void(int, const Vec&, double, double, double)> callback;
};

struct QpWarmStart {
  Vec z;
  Vec duals_full;
};

/// Abstracts the inequality block so the same engine can run on a plain
/// dense matrix or on a structured representation (the condensed control
/// problems have mostly-diagonal blocks plus a few dense budget rows).
class ConstraintOps {
 public:
  virtual ~ConstraintOps() = default;
  virtual int rows() const = 0;
  virtual int cols() const = 0;
  virtual void multiply(const Vec& z, Vec& out) const = 0;             // G z
  virtual void multiply_transpose(const Vec& y, Vec& out) const = 0;   // G' y
  virtual Mat gram() const = 0;                                        // G' G
  virtual void row(int r, Vec& out) const = 0;  // one dense row of G
};

class DenseConstraints final : public ConstraintOps {
 public:
  explicit DenseConstraints(Mat g) : g_(std::move(g)) {}
  int rows() const override { return static_cast<int>(g_.rows()); }
  int cols() const override { return static_cast<int>(g_.cols()); }
  void multiply(const Vec& z, Vec& out) const override { out.noalias() = g_ * z; }
  void multiply_transpose(const Vec& y, Vec& out) const override {
    out.noalias() = g_.transpose() * y;
  }
  Mat gram() const override;
  void row(int r, Vec& out) const override { out = g_.row(r).transpose(); }
  const Mat& matrix() const { return g_; }

 private:
  Mat g_;
};

/// Operator-splitting (ADMM) QP solver with a cached factorization per
/// penalty value, so repeated solves that share matrices (receding-horizon
/// steps) pay the factorization once.
class QpEngine {
 public:
  QpEngine(Mat hessian, std::shared_ptr<const ConstraintOps> constraints,
           Vec lower, Vec upper, QpSettings settings = {});

  /// Solves for the given linear term and inequality bounds.
  QpSolution solve(const Vec& linear, const Vec& ineq_bound,
                   const QpWarmStart* warm = nullptr) const;

  const QpSettings& settings() const { return settings_; }

 private:
  const Eigen::LLT<Mat>& factor(double penalty) const;

  bool polish(const Vec& linear, const Vec& ineq_bound, const Vec& y,
              QpSolution* out) const;

  Mat hessian_;
  std::shared_ptr<const ConstraintOps> constraints_;
  Vec lower_, upper_;
  QpSettings settings_;
  Mat gram_;  // I + G'G, fixed across solves
  mutable std::map<double, std::unique_ptr<Eigen::LLT<Mat>>> factors_;
  mutable double adapted_penalty_ = 0.0;  // carried across solves
};

QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings = {},
                    const QpWarmStart* warm = nullptr);

QpSolution solve_qp(const QpProblem& problem, double tol_primal,
                    double tol_dual, int max_iterations);

struct KktResiduals {
  double stationarity;
  double feasibility;
  double complementarity;
};

/// Max-abs residuals of the first-order optimality conditions at (z, duals):
/// projected stationarity against the box normal cone (including dual sign
/// violations), constraint violation, and complementary slackness of the
/// inequality rows.
KktResiduals kkt_residuals(const QpProblem& problem, const Vec& z,
                           const Vec& duals);

/// Writes the problem as a sequence of array-format matrix blocks for
/// offline inspection.
void dump_qp(const QpProblem& problem, const std::string& path);

}  // namespace nudge
