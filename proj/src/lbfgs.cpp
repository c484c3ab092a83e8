#include "gramtex/lbfgs.hpp"

#include <cmath>
#include <deque>

#include "gramtex/error.hpp"

namespace gramtex {
namespace {

struct Correction {
  Vector s;
  Vector y;
  double rho = 0.0;
};

Vector two_loop(const std::deque<Correction>& history, const Vector& g) {
  Vector q = g;
  std::vector<double> alpha(history.size());
  for (std::size_t i = history.size(); i-- > 0;) {
    alpha[i] = history[i].rho * history[i].s.dot(q);
    q -= alpha[i] * history[i].y;
  }
  const auto& last = history.back();
  q *= last.s.dot(last.y) / last.y.squaredNorm();
  for (std::size_t i = 0; i < history.size(); ++i) {
    const double beta = history[i].rho * history[i].y.dot(q);
    q += (alpha[i] - beta) * history[i].s;
  }
  return -q;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, Vector x0, const LbfgsOptions& options) {
  require(options.history >= 1 && options.max_line_search >= 1 && options.max_iters >= 0,
          ErrorCode::invalid_argument, "invalid L-BFGS options");
  auto project = [&](Vector v) {
    if (options.lower) v = v.cwiseMax(*options.lower);
    if (options.upper) v = v.cwiseMin(*options.upper);
    return v;
  };

  LbfgsResult r;
  r.x = project(std::move(x0));
  Vector g(r.x.size());
  r.value = f(r.x, g);
  r.evaluations = 1;
  if (!std::isfinite(r.value) || !g.allFinite()) {
    r.non_finite = true;
    return r;
  }
  r.trace.push_back(r.value);

  std::deque<Correction> history;
  double fallback_step = 1.0;
  Vector x_new, g_new(g.size());

  // Projected backtracking from x along d; true when an Armijo point was found.
  bool saw_non_finite = false;
  double f_new = 0.0;
  auto line_search = [&](const Vector& d, double step, int max_tries, double& accepted_step) {
    for (int k = 0; k < max_tries; ++k, step *= 0.5) {
      x_new = project(r.x + step * d);
      const Vector delta = x_new - r.x;
      if (delta.cwiseAbs().maxCoeff() == 0.0) return false;
      f_new = f(x_new, g_new);
      ++r.evaluations;
      if (!std::isfinite(f_new) || !g_new.allFinite()) {
        saw_non_finite = true;
        continue;
      }
      if (f_new <= r.value + options.armijo * g.dot(delta)) {
        accepted_step = step;
        return true;
      }
    }
    return false;
  };

  // Coordinates held at a bound by the gradient are frozen for this iteration.
  auto free_mask = [&]() {
    Vector m = Vector::Ones(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      if ((options.lower && r.x[i] <= *options.lower && g[i] > 0.0) ||
          (options.upper && r.x[i] >= *options.upper && g[i] < 0.0)) {
        m[i] = 0.0;
      }
    }
    return m;
  };

  while (r.iterations < options.max_iters) {
    const Vector free = free_mask();
    const Vector pg = g.cwiseProduct(free);
    if (pg.cwiseAbs().maxCoeff() <= options.gradient_tolerance) break;

    Vector d;
    if (history.empty()) {
      d = -pg / pg.norm();
    } else {
      d = two_loop(history, pg).cwiseProduct(free);
      if (pg.dot(d) >= 0.0) {
        history.clear();
        d = -pg / pg.norm();
      }
    }
    double step = 0.0;
    bool ok = line_search(d, 1.0, options.max_line_search, step);
    if (!ok) {
      // First-order fallback with step decay.
      history.clear();
      d = -pg / pg.norm();
      ok = line_search(d, fallback_step, 2 * options.max_line_search, step);
      if (!ok) {
        r.non_finite = saw_non_finite;
        break;
      }
      fallback_step = 2.0 * step;
      ++r.fallback_steps;
    }
    Vector s = x_new - r.x;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm() && sy > 0.0) {
      history.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(history.size()) > options.history) history.pop_front();
    }
    r.x = x_new;
    g = g_new;
    r.value = f_new;
    ++r.iterations;
    r.trace.push_back(std::min(r.trace.back(), r.value));
  }
  return r;
}

}  // namespace gramtex
