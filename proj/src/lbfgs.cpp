#include "fbrs/lbfgs.hpp"

#include "fbrs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace fbrs {

std::string to_string(LbfgsStatus s) {
  switch (s) {
    case LbfgsStatus::kConverged: return "converged";
    case LbfgsStatus::kMaxIters: return "max_iters";
    case LbfgsStatus::kLineSearchFailed: return "line_search_failed";
    case LbfgsStatus::kNonFinite: return "non_finite";
    case LbfgsStatus::kStopped: return "stopped";
  }
  return "unknown";
}

namespace {

struct Trial {
  double alpha = 0;
  double f = 0;
  double d = 0;  // directional derivative
  bool finite = true;
  Eigen::VectorXd g;
};

// Minimizer of the cubic matching (a, fa, da) and (b, fb, db); NaN if none.
double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  if (disc < 0) return std::numeric_limits<double>::quiet_NaN();
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double denom = db - da + 2.0 * d2;
  if (denom == 0) return std::numeric_limits<double>::quiet_NaN();
  return b - (b - a) * (db + d2 - d1) / denom;
}

class Search {
 public:
  Search(const Objective& fn, const LbfgsOptions& opts, LbfgsResult& res)
      : fn_(fn), opts_(opts), res_(res) {}

  Trial eval(const Eigen::VectorXd& x, const Eigen::VectorXd& p, double alpha) {
    Trial t;
    t.alpha = alpha;
    t.g.resize(x.size());
    const Eigen::VectorXd xt = x + alpha * p;
    t.f = fn_(xt, t.g);
    ++res_.evals;
    t.finite = std::isfinite(t.f) && t.g.allFinite();
    if (!t.finite) {
      res_.warning = true;
      nonfinite_ = true;
      return t;
    }
    t.d = t.g.dot(p);
    if (t.f < res_.f) {
      res_.f = t.f;
      res_.x = xt;
    }
    return t;
  }

  // Returns a step meeting the strong Wolfe conditions, or failing that a step
  // with sufficient decrease; alpha == 0 signals failure.
  Trial line_search(const Eigen::VectorXd& x, const Eigen::VectorXd& p, double f0, double d0, double alpha) {
    Trial prev{0, f0, d0, true, {}};
    int used = 0;
    while (used < opts_.max_linesearch) {
      Trial cur = eval(x, p, alpha);
      ++used;
      if (!cur.finite) {
        alpha = 0.5 * (prev.alpha + alpha);
        continue;
      }
      if (cur.f > f0 + opts_.c1 * alpha * d0 || (used > 1 && cur.f >= prev.f))
        return zoom(x, p, f0, d0, prev, cur, used);
      if (std::abs(cur.d) <= -opts_.c2 * d0) return cur;
      if (cur.d >= 0) return zoom(x, p, f0, d0, cur, prev, used);
      prev = std::move(cur);
      alpha *= 2.0;
    }
    return prev.alpha > 0 ? prev : Trial{};
  }

  bool saw_nonfinite() const { return nonfinite_; }

 private:
  Trial zoom(const Eigen::VectorXd& x, const Eigen::VectorXd& p, double f0, double d0, Trial lo, Trial hi,
             int used) {
    while (used < opts_.max_linesearch) {
      const double a = std::min(lo.alpha, hi.alpha), b = std::max(lo.alpha, hi.alpha);
      const double width = b - a;
      if (width <= 1e-16 * std::max(1.0, b)) break;
      double alpha = std::numeric_limits<double>::quiet_NaN();
      if (hi.finite) alpha = cubic_minimizer(lo.alpha, lo.f, lo.d, hi.alpha, hi.f, hi.d);
      if (!std::isfinite(alpha) || alpha < a + 0.1 * width || alpha > b - 0.1 * width) alpha = 0.5 * (a + b);
      Trial cur = eval(x, p, alpha);
      ++used;
      if (!cur.finite) {
        hi = std::move(cur);
        continue;
      }
      if (cur.f > f0 + opts_.c1 * alpha * d0 || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.d) <= -opts_.c2 * d0) return cur;
        if (cur.d * (hi.alpha - lo.alpha) >= 0) hi = lo;
        lo = std::move(cur);
      }
    }
    return lo.alpha > 0 ? lo : Trial{};
  }

  const Objective& fn_;
  const LbfgsOptions& opts_;
  LbfgsResult& res_;
  bool nonfinite_ = false;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& fn, Eigen::VectorXd x0, const LbfgsOptions& opts) {
  if (opts.max_iters < 1) throw ContractError("max_iters must be >= 1");
  if (opts.history < 1) throw ContractError("history must be >= 1");
  LbfgsResult res;
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd g(x.size());
  double f = fn(x, g);
  res.evals = 1;
  if (!std::isfinite(f) || !g.allFinite()) throw ContractError("objective is not finite at the starting point");
  res.x = x;
  res.f = f;
  res.energy_trace.push_back(f);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> coef(opts.history);
  Search search(fn, opts, res);

  res.status = LbfgsStatus::kMaxIters;
  auto stop_here = [&] {
    if (!opts.stop || !opts.stop(x)) return false;
    res.x = x;
    res.f = f;
    res.status = LbfgsStatus::kStopped;
    return true;
  };
  if (stop_here()) return res;
  while (res.iterations < opts.max_iters) {
    if (g.norm() <= opts.grad_tolerance) {
      res.status = LbfgsStatus::kConverged;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd p = -g;
    const int m = static_cast<int>(s_hist.size());
    for (int i = m - 1; i >= 0; --i) {
      coef[i] = rho_hist[i] * s_hist[i].dot(p);
      p -= coef[i] * y_hist[i];
    }
    if (m > 0) p *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (int i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(p);
      p += (coef[i] - beta) * s_hist[i];
    }
    double d0 = g.dot(p);
    if (!(d0 < 0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      p = -g;
      d0 = -g.squaredNorm();
    }
    const double alpha0 = s_hist.empty() ? std::min(1.0, 1.0 / p.norm()) : 1.0;
    Trial step = search.line_search(x, p, f, d0, alpha0);
    if (step.alpha <= 0) {
      if (!s_hist.empty()) {
        // Retry once along steepest descent before giving up.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      res.status = search.saw_nonfinite() ? LbfgsStatus::kNonFinite : LbfgsStatus::kLineSearchFailed;
      res.warning = true;
      break;
    }
    Eigen::VectorXd s = step.alpha * p;
    Eigen::VectorXd y = step.g - g;
    x += s;
    g = std::move(step.g);
    f = step.f;
    res.energy_trace.push_back(f);
    ++res.iterations;
    if (stop_here()) return res;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0) {
      if (static_cast<int>(s_hist.size()) == opts.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
  }
  if (res.status == LbfgsStatus::kMaxIters && g.norm() <= opts.grad_tolerance) res.status = LbfgsStatus::kConverged;
  return res;
}

}  // namespace fbrs
