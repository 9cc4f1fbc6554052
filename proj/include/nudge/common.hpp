#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace nudge {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or out-of-range configuration input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Structural problem with an influence network (isolated listener,
/// bad credibility, unreadable file, ...).
class NetworkError : public Error {
 public:
  using Error::Error;
};

/// An input violates the per-agent headroom bound
/// 0 <= rho.*u_mem + (1-rho).*u_s <= 1 - u_o that keeps the effective
/// input (and hence the state) inside [0,1].
class HeadroomError : public Error {
 public:
  HeadroomError(const std::string& what, std::vector<int> agents,
                std::vector<double> margins)
      : Error(what), agents_(std::move(agents)), margins_(std::move(margins)) {}

  /// Agents whose bound is violated.
  const std::vector<int>& agents() const { return agents_; }
  /// Amount by which each listed agent exceeds its headroom.
  const std::vector<double>& margins() const { return margins_; }

 private:
  std::vector<int> agents_;
  std::vector<double> margins_;
};

/// An intervention was charged past the available budget.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, int step, double deficit)
      : Error(what), step_(step), deficit_(deficit) {}

  int step() const { return step_; }
  double deficit() const { return deficit_; }

 private:
  int step_;
  double deficit_;
};

/// An iterative routine ran out of iterations; carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_estimate, int iterations)
      : Error(what), last_estimate_(last_estimate), iterations_(iterations) {}

  double last_estimate() const { return last_estimate_; }
  int iterations() const { return iterations_; }

 private:
  double last_estimate_;
  int iterations_;
};

}  // namespace nudge
