#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace fbrs {

/// Value-and-gradient callback. Must write the gradient into `grad`
/// (pre-sized to x.size()).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int max_iters = 20;
  double grad_tolerance = 1e-5;  // on the Euclidean gradient norm
  int history = 10;
  int max_linesearch = 20;  // evaluations per line search
  double c1 = 1e-4;         // sufficient decrease
  double c2 = 0.9;          // curvature
  /// Checked at the start point and after each accepted iterate; returning
  /// true ends the run at that point with status kStopped.
  std::function<bool(const Eigen::VectorXd& x)> stop;
};

enum class LbfgsStatus { kConverged, kMaxIters, kLineSearchFailed, kNonFinite, kStopped };

std::string to_string(LbfgsStatus s);

struct LbfgsResult {
  Eigen::VectorXd x;                 // best point seen, or the stopping iterate
  double f = 0;                      // objective at x
  std::vector<double> energy_trace;  // f(x0) then each accepted iterate
  int iterations = 0;
  int evals = 0;
  LbfgsStatus status = LbfgsStatus::kMaxIters;
  bool warning = false;  // non-finite value met or line search gave up
};

/// Unconstrained limited-memory BFGS with a strong-Wolfe line search.
/// Throws ContractError if fn is not finite at x0.
LbfgsResult lbfgs_minimize(const Objective& fn, Eigen::VectorXd x0, const LbfgsOptions& opts = {});

}  // namespace fbrs
