#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ugm {

struct DescentOptions {
  std::size_t max_iters = 5000;
  double grad_tol = 1e-6;
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo = 1e-4;
  std::size_t max_backtracks = 60;
  bool record_trace = false;
};

struct DescentResult {
  std::vector<double> x;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;          // gradient norm below tolerance
  bool line_search_failed = false;
  std::vector<double> trace;       // objective after each accepted step
};

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Full-batch gradient descent with Armijo backtracking. `f(x, grad)` returns
/// the objective and writes the gradient. The trial step starts at twice the
/// last accepted step, so accepted objectives are non-increasing.
template <typename Objective>
DescentResult gradient_descent(Objective&& f, std::vector<double> x0, const DescentOptions& opt) {
  DescentResult r;
  r.x = std::move(x0);
  std::vector<double> g(r.x.size()), trial(r.x.size()), g_trial(r.x.size());
  r.value = f(std::span<const double>(r.x), std::span<double>(g));
  r.grad_norm = norm2(g);
  if (opt.record_trace) r.trace.push_back(r.value);
  double step = opt.initial_step;
  while (r.iterations < opt.max_iters) {
    if (r.grad_norm < opt.grad_tol) {
      r.converged = true;
      break;
    }
    const double g2 = r.grad_norm * r.grad_norm;
    bool accepted = false;
    double v_trial = 0.0;
    for (std::size_t bt = 0; bt <= opt.max_backtracks; ++bt) {
      for (std::size_t i = 0; i < r.x.size(); ++i) trial[i] = r.x[i] - step * g[i];
      v_trial = f(std::span<const double>(trial), std::span<double>(g_trial));
      if (std::isfinite(v_trial) && v_trial <= r.value - opt.armijo * step * g2) {
        accepted = true;
        break;
      }
      step *= opt.shrink;
    }
    if (!accepted) {
      r.line_search_failed = true;
      break;
    }
    r.x.swap(trial);
    g.swap(g_trial);
    r.value = v_trial;
    r.grad_norm = norm2(g);
    ++r.iterations;
    if (opt.record_trace) r.trace.push_back(r.value);
    step *= 2.0;
  }
  if (r.grad_norm < opt.grad_tol) r.converged = true;
  return r;
}

}  // namespace ugm
