#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "proxcsl/data.hpp"
#include "proxcsl/error.hpp"
#include "proxcsl/objective.hpp"
#include "proxcsl/weights.hpp"

namespace proxcsl {

/**
 * Tunables for the proximal Newton engine.
 *
 * The defaults are the ones used for surrogate updates (10 outer steps,
 * 50 coordinate-descent passes, linesearch over 0.5^k for k = 0..20,
 * alpha starting at 1e-4 and growing tenfold on divergence). Local fits
 * use local_fit(), which allows 20 outer steps.
 */
struct SolverConfig {
  std::size_t max_outer = 10;
  std::size_t max_inner = 50;
  double linesearch_beta = 0.5;
  std::size_t linesearch_kmax = 20;
  double alpha_init = 1e-4;
  double alpha_factor = 10.0;
  // Escalating past this abandons the update.
  double alpha_max = 1e4;
  bool adaptive_alpha = true;
  // Divergence: surrogate objective drops by at least divergence_drop while
  // the local objective drops by no more than divergence_local_tol.
  double divergence_drop = 0.20;
  double divergence_local_tol = 0.01;
  std::size_t divergence_check_after = 5;
  double inner_tol = 1e-8;
  double outer_tol = 1e-6;

  static SolverConfig local_fit() {
    SolverConfig c;
    c.max_outer = 20;
    c.max_inner = 50;
    c.alpha_init = 0.0;
    c.adaptive_alpha = false;
    return c;
  }

  void validate() const {
    if (max_outer < 1 || max_inner < 1 || linesearch_kmax < 1 || divergence_check_after < 1) {
      throw InvalidArgument("solver iteration counts must be at least 1");
    }
    if (!(linesearch_beta > 0.0 && linesearch_beta < 1.0)) {
      throw InvalidArgument("linesearch_beta must lie in (0, 1)");
    }
    if (!(inner_tol > 0.0) || !(outer_tol > 0.0)) {
      throw InvalidArgument("tolerances must be positive");
    }
    if (!(alpha_init >= 0.0) || !(alpha_factor > 1.0) || !(alpha_max > 0.0)) {
      throw InvalidArgument("invalid alpha schedule");
    }
    if (adaptive_alpha && alpha_init <= 0.0) {
      throw InvalidArgument("adaptive alpha needs alpha_init > 0");
    }
  }
};

struct TraceEntry {
  std::size_t outer_step;
  double csl_objective;
  double local_objective;
};

struct SolveResult {
  WeightVector w;
  std::size_t outer_steps_used = 0;
  double final_alpha = 0.0;
  std::vector<TraceEntry> objective_trace;
  bool converged = false;
  // Alpha escalation hit alpha_max; w is the unchanged starting point.
  bool abandoned = false;
  std::size_t alpha_escalations = 0;
  std::size_t inner_passes = 0;
  std::vector<double> outer_step_seconds;
};

/// Raised when an objective evaluates to a non-finite value.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, std::vector<TraceEntry> trace)
      : Error(what), trace_(std::move(trace)) {}

  const std::vector<TraceEntry>& trace() const noexcept { return trace_; }

 private:
  std::vector<TraceEntry> trace_;
};

/**
 * Closed-form minimizer over z of  G z + H z^2 / 2 + lambda1 |w + z|.
 *
 * Requires H > 0.
 */
inline double coordinate_update(double G, double H, double w, double lambda1) {
  if (!(H > 0.0)) throw InvalidArgument("coordinate_update needs a positive curvature");
  if (G + lambda1 <= H * w) return -(G + lambda1) / H;
  if (G - lambda1 >= H * w) return -(G - lambda1) / H;
  return -w;
}

/**
 * One cyclic coordinate-descent pass over features 0..d-1 on the quadratic
 * model at `iterate`:
 *
 *   G_j = base_j + (1/n) sum_i d_i x_ij (Xδ)_i + (lambda2 + alpha) δ_j
 *
 * `base` is the gradient of the smooth surrogate at the iterate. δ and the
 * cached Xδ are updated in place. Coordinates sent to zero by the prox are
 * set exactly to -iterate_j. Returns the largest |step| taken.
 */
inline double inner_cd_pass(const LabeledDataset& part, CurvatureState& state,
                            WeightVector& delta, std::span<const double> base,
                            const WeightVector& iterate, const Regularization& reg) {
  const auto& X = part.X();
  const auto d = X.n_cols();
  double max_step = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double H = state.hess_diag[j];
    // Only an empty column with zero damping has no curvature; leave it alone.
    if (!(H > 0.0)) continue;
    const auto col = X.column(j);
    double cross = 0.0;
    for (std::size_t k = 0; k < col.size(); ++k) {
      const auto r = col.rows[k];
      cross += state.d_weights[r] * col.values[k] * state.xdelta[r];
    }
    const double G = base[j] + cross * state.inv_n + state.diag_shift * delta[j];
    const double current = iterate[j] + delta[j];
    const double z = coordinate_update(G, H, current, reg.lambda1);
    if (z == 0.0) continue;
    const double target_delta = (z == -current) ? -iterate[j] : delta[j] + z;
    const double step = target_delta - delta[j];
    if (step == 0.0) continue;
    delta[j] = target_delta;
    for (std::size_t k = 0; k < col.size(); ++k) state.xdelta[col.rows[k]] += step * col.values[k];
    max_step = std::max(max_step, std::abs(step));
  }
  return max_step;
}

struct SubproblemResult {
  WeightVector delta;
  std::size_t passes = 0;
  double last_max_step = 0.0;
};

/// Runs passes on a prepared state until the largest step of a pass falls
/// below inner_tol * max(1, ||iterate||_inf) or max_inner passes are done.
inline SubproblemResult solve_quadratic_subproblem(const LabeledDataset& part,
                                                   CurvatureState& state,
                                                   std::span<const double> base,
                                                   const WeightVector& iterate,
                                                   const Regularization& reg,
                                                   const SolverConfig& config) {
  SubproblemResult out{WeightVector(iterate.size()), 0, 0.0};
  const double tol = config.inner_tol * std::max(1.0, iterate.norm_inf());
  while (out.passes < config.max_inner) {
    out.last_max_step = inner_cd_pass(part, state, out.delta, base, iterate, reg);
    ++out.passes;
    if (out.last_max_step < tol) break;
  }
  return out;
}

/// Quadratic model of the damped surrogate at `anchor`, solved by coordinate
/// descent. Returns the step δ.
inline WeightVector solve_quadratic_subproblem(const LabeledDataset& part,
                                               const WeightVector& anchor,
                                               const GradientSnapshot& correction, double alpha,
                                               const Regularization& reg,
                                               const SolverConfig& config) {
  config.validate();
  auto state = curvature_at(part, anchor, alpha, reg);
  auto base = detail::gradient_from_margins(part, state.margins, anchor, reg.lambda2);
  for (std::size_t j = 0; j < base.size(); ++j) base[j] += correction.g[j];
  return solve_quadratic_subproblem(part, state, base, anchor, reg, config).delta;
}

struct LinesearchResult {
  double scale = 1.0;
  std::size_t k = 0;
  WeightVector w;
  double objective = 0.0;
  // Margins X w at the selected point.
  std::vector<double> margins;
};

namespace detail {

/// Candidate iterate + scale * delta; the full step reproduces exact zeros.
inline WeightVector step_point(const WeightVector& iterate, const WeightVector& delta,
                               double scale) {
  WeightVector w(iterate.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = scale == 1.0 ? iterate[j] + delta[j] : iterate[j] + scale * delta[j];
  }
  return w;
}

}  // namespace detail

/**
 * Evaluates the damped surrogate at iterate + beta^k delta for k = 0..kmax
 * and keeps the lowest value (ties go to the larger step). Margins of the
 * candidates are formed from the cached Xw and Xδ, so no pass over X is needed.
 */
inline LinesearchResult linesearch(const LabeledDataset& part, const WeightVector& iterate,
                                   std::span<const double> margins, const WeightVector& delta,
                                   std::span<const double> xdelta, const WeightVector& anchor,
                                   std::span<const double> correction, double alpha,
                                   const Regularization& reg, const SolverConfig& config) {
  const auto n = part.n_rows();
  auto surrogate = [&](const WeightVector& w, std::span<const double> m) {
    return detail::mean_loss(part.y(), m) + detail::penalty(w, reg) +
           detail::csl_extra(w, anchor, correction, alpha);
  };
  LinesearchResult best;
  if (delta.nnz() == 0) {
    best.scale = 0.0;
    best.w = iterate;
    best.margins.assign(margins.begin(), margins.end());
    best.objective = surrogate(best.w, best.margins);
    return best;
  }
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<double> m(n);
  double scale = 1.0;
  for (std::size_t k = 0; k <= config.linesearch_kmax; ++k) {
    for (std::size_t i = 0; i < n; ++i) m[i] = margins[i] + scale * xdelta[i];
    auto w = detail::step_point(iterate, delta, scale);
    const double obj = surrogate(w, m);
    if (obj < best.objective) {
      best.objective = obj;
      best.scale = scale;
      best.k = k;
      best.w = std::move(w);
      best.margins = m;
    }
    scale *= config.linesearch_beta;
  }
  if (best.w.size() == 0) {
    // Every candidate was NaN; report the full step so the caller sees it.
    best.w = detail::step_point(iterate, delta, 1.0);
    for (std::size_t i = 0; i < n; ++i) m[i] = margins[i] + xdelta[i];
    best.margins = m;
    best.objective = std::numeric_limits<double>::quiet_NaN();
  }
  return best;
}

/// Linesearch from `iterate`, which is also the damping anchor.
inline LinesearchResult linesearch(const LabeledDataset& part, const WeightVector& iterate,
                                   const WeightVector& delta, const GradientSnapshot& correction,
                                   double alpha, const Regularization& reg,
                                   const SolverConfig& config) {
  const auto m = detail::margins(part, iterate);
  const auto xd = detail::margins(part, delta);
  return linesearch(part, iterate, m, delta, xd, iterate, correction.g, alpha, reg, config);
}

/// Objective values at the start of an outer step and at the trial point.
struct DivergenceProbe {
  double csl_start;
  double csl_now;
  double local_start;
  double local_now;
};

/// True (pass) unless the surrogate dropped sharply while the local
/// objective barely moved or went up.
inline bool divergence_check(const DivergenceProbe& probe, const SolverConfig& config) {
  const double csl_drop = probe.csl_start - probe.csl_now;
  const double local_drop = probe.local_start - probe.local_now;
  const bool sharp_drop = csl_drop >= config.divergence_drop * std::abs(probe.csl_start);
  const bool local_stalled = local_drop <= config.divergence_local_tol * std::abs(probe.local_start);
  return !(sharp_drop && local_stalled);
}

namespace detail {

/**
 * Proximal Newton on  L_k(w) + cᵀw + (alpha/2)||w - anchor||^2  starting at
 * the anchor. With adaptive alpha the first outer step probes the trial
 * point after divergence_check_after passes and restarts with a larger
 * alpha until the probe passes.
 */
inline SolveResult prox_newton(const LabeledDataset& part, const WeightVector& anchor,
                               std::span<const double> correction, double alpha, bool adaptive,
                               const Regularization& reg, const SolverConfig& config) {
  using clock = std::chrono::steady_clock;
  config.validate();
  reg.validate();
  check_dims(part, anchor.size());
  if (correction.size() != anchor.size()) throw InvalidArgument("correction length mismatch");

  const auto d = anchor.size();
  const auto n = part.n_rows();
  SolveResult result;
  WeightVector w = anchor;

  auto objectives = [&](const WeightVector& at, std::span<const double> m) {
    const double local = mean_loss(part.y(), m) + penalty(at, reg);
    return std::pair{local + csl_extra(at, anchor, correction, alpha), local};
  };
  auto fail = [&](const char* where) {
    throw SolverError(std::string("non-finite objective ") + where, result.objective_trace);
  };

  for (std::size_t s = 0; s < config.max_outer; ++s) {
    const auto started = clock::now();
    // The probe runs only in the first outer step: after every pass from
    // divergence_check_after on, and once more on the point the linesearch
    // accepts. A failure raises alpha and restarts the step.
    const bool probing = adaptive && s == 0;
    CurvatureState state;
    std::vector<double> base(d);
    WeightVector delta;
    LinesearchResult ls;
    double csl_start = 0.0;
    double local_start = 0.0;
    double last_step = 0.0;

    for (;;) {
      state = curvature_at(part, w, alpha, reg);
      std::tie(csl_start, local_start) = objectives(w, state.margins);
      if (!std::isfinite(csl_start)) fail("at outer step start");
      const auto grad = gradient_from_margins(part, state.margins, w, reg.lambda2);
      for (std::size_t j = 0; j < d; ++j) {
        base[j] = grad[j] + correction[j] + alpha * (w[j] - anchor[j]);
      }
      auto diverged = [&](const WeightVector& trial, std::span<const double> m) {
        const auto [csl_now, local_now] = objectives(trial, m);
        return !divergence_check({csl_start, csl_now, local_start, local_now}, config);
      };
      delta = WeightVector(d);
      std::size_t passes = 0;
      const double tol = config.inner_tol * std::max(1.0, w.norm_inf());
      const std::size_t probe_at = std::min(config.divergence_check_after, config.max_inner);
      bool failed = false;
      std::vector<double> m(probing ? n : 0);
      while (passes < config.max_inner) {
        last_step = inner_cd_pass(part, state, delta, base, w, reg);
        ++passes;
        const bool inner_done = last_step < tol;
        if (probing && (passes >= probe_at || inner_done)) {
          for (std::size_t i = 0; i < n; ++i) m[i] = state.margins[i] + state.xdelta[i];
          if (diverged(step_point(w, delta, 1.0), m)) {
            failed = true;
            break;
          }
        }
        if (inner_done) break;
      }
      result.inner_passes += passes;
      if (!failed) {
        ls = linesearch(part, w, state.margins, delta, state.xdelta, anchor, correction, alpha,
                        reg, config);
        if (!std::isfinite(ls.objective)) fail("in linesearch");
        failed = probing && ls.objective <= csl_start && diverged(ls.w, ls.margins);
      }
      if (!failed) break;
      alpha *= config.alpha_factor;
      ++result.alpha_escalations;
      if (alpha > config.alpha_max) {
        result.w = anchor;
        result.abandoned = true;
        result.final_alpha = alpha;
        return result;
      }
    }

    if (s == 0) result.objective_trace.push_back({0, csl_start, local_start});
    result.outer_step_seconds.push_back(
        std::chrono::duration<double>(clock::now() - started).count());
    const double tol = config.inner_tol * std::max(1.0, w.norm_inf());
    if (ls.objective > csl_start) {
      // No candidate improves on the current point: nothing to accept.
      result.converged = last_step < tol;
      break;
    }
    w = ls.w;
    ++result.outer_steps_used;
    result.objective_trace.push_back({s + 1, ls.objective, objectives(w, ls.margins).second});
    const double change = csl_start - ls.objective;
    if (change <= config.outer_tol * std::abs(csl_start) || delta.nnz() == 0) {
      result.converged = true;
      break;
    }
  }
  result.w = std::move(w);
  result.final_alpha = alpha;
  return result;
}

}  // namespace detail

/**
 * One surrogate update on a partition, starting from w_t.
 *
 * global_grad must be the gradient of the full-data smooth loss at w_t. The
 * local gradient at w_t may be passed in when the caller already has it.
 */
inline SolveResult csl_update(const LabeledDataset& part, const WeightVector& w_t,
                              const GradientSnapshot& global_grad, const SolverConfig& config,
                              const Regularization& reg,
                              const GradientSnapshot* local_grad_at_w_t = nullptr) {
  if (global_grad.size() != w_t.size()) throw InvalidArgument("global gradient length mismatch");
  const auto local = local_grad_at_w_t ? *local_grad_at_w_t : local_gradient(part, w_t, reg.lambda2);
  const auto correction = global_grad - local;
  return detail::prox_newton(part, w_t, correction.g, config.alpha_init, config.adaptive_alpha,
                             reg, config);
}

/// Minimizes the local objective on one partition: no correction, no
/// damping, no divergence probe. Starts from `start` (zero by default).
inline SolveResult solve_local(const LabeledDataset& part, const Regularization& reg,
                               const SolverConfig& config = SolverConfig::local_fit(),
                               std::optional<WeightVector> start = std::nullopt) {
  const auto d = part.n_features();
  const WeightVector w0 = start ? std::move(*start) : WeightVector(d);
  const std::vector<double> zero(d, 0.0);
  return detail::prox_newton(part, w0, zero, 0.0, false, reg, config);
}

}  // namespace proxcsl
