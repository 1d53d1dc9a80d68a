#pragma once

// Limited-memory BFGS with a backtracking Armijo line search.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffrbd {

struct OptimizeOptions {
  int max_iterations = 100;
  int history = 10;
  double g_tol = 1e-8;
  double armijo_c1 = 1e-4;
  double shrink = 0.5;
  int max_line_search = 40;
};

enum class OptimizeStatus {
  GradientConverged,
  IterationLimit,
  LineSearchFailed,
  NonFinite,
};

inline const char* to_string(OptimizeStatus s) {
  switch (s) {
    case OptimizeStatus::GradientConverged:
      return "gradient_converged";
    case OptimizeStatus::IterationLimit:
      return "iteration_limit";
    case OptimizeStatus::LineSearchFailed:
      return "line_search_failed";
    case OptimizeStatus::NonFinite:
      return "non_finite";
  }
  return "unknown";
}

struct OptimizeIterate {
  int iteration = 0;
  double value = 0.0;
  double grad_inf_norm = 0.0;
  std::vector<double> x;
};

struct OptimizeResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  OptimizeStatus status = OptimizeStatus::IterationLimit;
  int evaluations = 0;
  /// Accepted iterates, starting with x0 at iteration 0.
  std::vector<OptimizeIterate> history;
};

/// Objective returning its value and writing the gradient.
using Objective = std::function<double(const std::vector<double>& x, std::vector<double>& grad)>;

namespace detail {

inline double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
}

}  // namespace detail

/// Minimizes `f` from `x0`. Stops on ||grad||_inf < g_tol, the iteration cap,
/// a failed line search, or a non-finite value (keeping the last good iterate).
inline OptimizeResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const OptimizeOptions& opts = {}) {
  const std::size_t n = x0.size();
  OptimizeResult res;
  std::vector<double> g(n, 0.0);
  double fx = f(x0, g);
  res.evaluations = 1;
  res.x = x0;
  res.value = fx;
  if (!std::isfinite(fx) || !detail::all_finite(g)) {
    res.status = OptimizeStatus::NonFinite;
    return res;
  }
  res.history.push_back({0, fx, detail::inf_norm(g), x0});

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> x = std::move(x0);
  std::vector<double> d(n), xn(n), gn(n);

  for (int it = 0;; ++it) {
    if (detail::inf_norm(g) < opts.g_tol) {
      res.status = OptimizeStatus::GradientConverged;
      res.converged = true;
      break;
    }
    if (it >= opts.max_iterations) {
      res.status = OptimizeStatus::IterationLimit;
      break;
    }

    // Two-loop recursion: d = -H g.
    d = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * detail::dot(s_hist[k], d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * y_hist[k][i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) {
      gamma = detail::dot(s_hist.back(), y_hist.back()) / detail::dot(y_hist.back(), y_hist.back());
    } else {
      const double gn2 = std::sqrt(detail::dot(g, g));
      gamma = std::min(1.0, 1.0 / gn2);
    }
    for (auto& e : d) e *= gamma;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * detail::dot(y_hist[k], d);
      for (std::size_t i = 0; i < n; ++i) d[i] += (alpha[k] - beta) * s_hist[k][i];
    }
    for (auto& e : d) e = -e;

    double slope = detail::dot(g, d);
    if (!(slope < 0.0)) {
      // Not a descent direction; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      const double gn2 = std::sqrt(detail::dot(g, g));
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i] * std::min(1.0, 1.0 / gn2);
      slope = detail::dot(g, d);
    }

    double step = 1.0;
    bool accepted = false;
    bool non_finite = false;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + step * d[i];
      double fn = std::numeric_limits<double>::quiet_NaN();
      try {
        fn = f(xn, gn);
      } catch (const std::domain_error&) {
        fn = std::numeric_limits<double>::quiet_NaN();
      }
      ++res.evaluations;
      if (std::isfinite(fn) && detail::all_finite(gn)) {
        if (fn <= fx + opts.armijo_c1 * step * slope) {
          std::vector<double> s(n), y(n);
          for (std::size_t i = 0; i < n; ++i) {
            s[i] = xn[i] - x[i];
            y[i] = gn[i] - g[i];
          }
          const double sy = detail::dot(s, y);
          if (sy > 1e-10) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opts.history) {
              s_hist.pop_front();
              y_hist.pop_front();
              rho_hist.pop_front();
            }
          }
          x = xn;
          g = gn;
          fx = fn;
          accepted = true;
          break;
        }
      } else {
        non_finite = true;
      }
      step *= opts.shrink;
    }
    if (!accepted) {
      res.status = non_finite ? OptimizeStatus::NonFinite : OptimizeStatus::LineSearchFailed;
      break;
    }
    res.iterations = it + 1;
    res.x = x;
    res.value = fx;
    res.history.push_back({it + 1, fx, detail::inf_norm(g), x});
  }
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace diffrbd
