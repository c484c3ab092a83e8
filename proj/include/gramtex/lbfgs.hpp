#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gramtex/types.hpp"

namespace gramtex {

/// Returns f(x) and writes its gradient.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  int max_iters = 500;
  int history = 10;
  int max_line_search = 25;
  double armijo = 1e-4;
  double gradient_tolerance = 0.0;  // stop when the projected gradient has ||.||_inf <= tolerance
  std::optional<double> lower;      // optional box constraint, applied by projection
  std::optional<double> upper;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  int fallback_steps = 0;     // iterations taken by the first-order fallback
  std::vector<double> trace;  // best value so far: entry 0 at x0, then one per iteration
  bool non_finite = false;    // stopped because the objective returned a non-finite value
};

/// Limited-memory BFGS with projected backtracking (Armijo) line search.
/// When the quasi-Newton step fails, the history is dropped and a projected
/// gradient step with step decay is tried instead.
LbfgsResult minimize_lbfgs(const Objective& f, Vector x0, const LbfgsOptions& options);

}  // namespace gramtex
