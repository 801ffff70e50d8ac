#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "proxcsl/data.hpp"
#include "proxcsl/error.hpp"
#include "proxcsl/weights.hpp"

namespace proxcsl {

/// L1 strength lambda1 and elastic-net L2 strength lambda2 (penalty lambda2/2 ||w||^2).
struct Regularization {
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  void validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
      throw InvalidArgument("regularization strengths must be nonnegative");
    }
  }
};

/// A gradient together with the point it was evaluated at.
struct GradientSnapshot {
  std::vector<double> g;
  WeightVector at;

  std::size_t size() const noexcept { return g.size(); }
};

/// Difference a - b of two gradients taken at the same point.
inline GradientSnapshot operator-(const GradientSnapshot& a, const GradientSnapshot& b) {
  if (a.size() != b.size()) throw InvalidArgument("gradient length mismatch");
  GradientSnapshot out{std::vector<double>(a.size()), a.at};
  for (std::size_t j = 0; j < a.size(); ++j) out.g[j] = a.g[j] - b.g[j];
  return out;
}

/**
 * Cached second-order information for one partition at one iterate.
 *
 * The Hessian (1/n) Xᵀ D X is never formed. We keep D as a length-n vector,
 * the diagonal (with lambda2 and the damping alpha folded in) as a length-d
 * vector, and the running product X·δ, which is all coordinate descent needs.
 */
struct CurvatureState {
  std::vector<double> margins;    // X w
  std::vector<double> d_weights;  // pi_i (1 - pi_i), floored
  std::vector<double> hess_diag;  // (1/n) sum_i d_i x_ij^2 + lambda2 + alpha
  std::vector<double> xdelta;     // X δ for the accumulated step δ
  double inv_n = 0.0;
  double diag_shift = 0.0;        // lambda2 + alpha
};

inline constexpr double kMinCurvatureWeight = 1e-12;

/// log(1 + e^z) without overflow.
inline double log1p_exp(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Logistic function.
inline double expit(double z) { return detail::expit(z); }

/// l(y, z) = log(1 + e^z) - y z
inline double logistic_loss(int y, double z) {
  if (y != 0 && y != 1) throw InvalidArgument("label must be 0 or 1");
  if (z > 0.0) {
    // z + log1p(e^-z) - y z, grouped so y = 1 cancels exactly.
    return (1 - y) * z + std::log1p(std::exp(-z));
  }
  return std::log1p(std::exp(z)) - y * z;
}

namespace detail {

inline void check_dims(const LabeledDataset& part, std::size_t d) {
  if (part.n_features() != d) {
    throw InvalidArgument("weight dimension " + std::to_string(d) +
                          " does not match feature dimension " +
                          std::to_string(part.n_features()));
  }
}

inline std::vector<double> margins(const LabeledDataset& part, const WeightVector& w) {
  check_dims(part, w.size());
  std::vector<double> m(part.n_rows());
  part.X().multiply(w.span(), m);
  return m;
}

/// Mean logistic loss given precomputed margins.
inline double mean_loss(std::span<const std::uint8_t> y, std::span<const double> margins) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += logistic_loss(y[i], margins[i]);
  return y.empty() ? 0.0 : s / static_cast<double>(y.size());
}

inline double penalty(const WeightVector& w, const Regularization& reg) {
  double l1 = 0.0;
  double l2 = 0.0;
  for (const double v : w) {
    l1 += std::abs(v);
    l2 += v * v;
  }
  return reg.lambda1 * l1 + 0.5 * reg.lambda2 * l2;
}

/// correctionᵀ w + (alpha / 2) ||w - anchor||^2
inline double csl_extra(const WeightVector& w, const WeightVector& anchor,
                        std::span<const double> correction, double alpha) {
  double lin = 0.0;
  double prox = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    lin += correction[j] * w[j];
    const double diff = w[j] - anchor[j];
    prox += diff * diff;
  }
  return lin + 0.5 * alpha * prox;
}

/// Gradient of the mean logistic loss (plus lambda2 w) from precomputed margins.
inline std::vector<double> gradient_from_margins(const LabeledDataset& part,
                                                 std::span<const double> margins,
                                                 const WeightVector& w, double lambda2) {
  const auto n = part.n_rows();
  std::vector<double> resid(n);
  const auto y = part.y();
  for (std::size_t i = 0; i < n; ++i) resid[i] = expit(margins[i]) - y[i];
  std::vector<double> g(part.n_features());
  part.X().multiply_transpose(resid, g);
  const double inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) g[j] = g[j] * inv_n + lambda2 * w[j];
  return g;
}

}  // namespace detail

/// Mean logistic loss over the partition, no penalty.
inline double smooth_loss(const LabeledDataset& part, const WeightVector& w) {
  return detail::mean_loss(part.y(), detail::margins(part, w));
}

/// (1/n) sum l(y_i, x_iᵀw) + lambda1 ||w||_1 + (lambda2/2) ||w||_2^2
inline double local_objective(const LabeledDataset& part, const WeightVector& w,
                              const Regularization& reg) {
  return smooth_loss(part, w) + detail::penalty(w, reg);
}

/// Gradient of the smooth part: (1/n) Xᵀ(sigma(Xw) - y) + lambda2 w. The L1
/// term is left to the prox step.
inline GradientSnapshot local_gradient(const LabeledDataset& part, const WeightVector& w,
                                       double lambda2 = 0.0) {
  const auto m = detail::margins(part, w);
  return {detail::gradient_from_margins(part, m, w, lambda2), w};
}

/**
 * Damped surrogate objective for one update:
 * L_k(w) + correctionᵀ w + (alpha/2) ||w - anchor||^2,
 * where correction = global gradient - local gradient at the anchor.
 */
inline double csl_objective(const LabeledDataset& part, const WeightVector& w,
                            const WeightVector& anchor, const GradientSnapshot& correction,
                            double alpha, const Regularization& reg) {
  if (anchor.size() != w.size() || correction.size() != w.size()) {
    throw InvalidArgument("csl_objective: dimension mismatch");
  }
  return local_objective(part, w, reg) + detail::csl_extra(w, anchor, correction.g, alpha);
}

/// Builds the curvature cache at w. xdelta starts at zero.
inline CurvatureState curvature_at(const LabeledDataset& part, const WeightVector& w, double alpha,
                                   const Regularization& reg) {
  CurvatureState s;
  s.margins = detail::margins(part, w);
  const auto n = part.n_rows();
  s.inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;
  s.diag_shift = reg.lambda2 + alpha;
  s.d_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = expit(s.margins[i]);
    const double one_minus = expit(-s.margins[i]);
    s.d_weights[i] = std::max(pi * one_minus, kMinCurvatureWeight);
  }
  const auto d = part.n_features();
  s.hess_diag.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto col = part.X().column(j);
    double acc = 0.0;
    for (std::size_t k = 0; k < col.size(); ++k) {
      acc += s.d_weights[col.rows[k]] * col.values[k] * col.values[k];
    }
    s.hess_diag[j] = acc * s.inv_n + s.diag_shift;
  }
  s.xdelta.assign(n, 0.0);
  return s;
}

}  // namespace proxcsl
