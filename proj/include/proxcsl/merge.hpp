#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "proxcsl/data.hpp"
#include "proxcsl/error.hpp"
#include "proxcsl/objective.hpp"
#include "proxcsl/weights.hpp"

namespace proxcsl {

/// Sparse (index, value) form of a weight vector, as sent over the wire.
struct SparseWeights {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  static SparseWeights from_dense(const WeightVector& w) {
    SparseWeights s;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (w[j] != 0.0) {
        s.indices.push_back(static_cast<std::uint32_t>(j));
        s.values.push_back(w[j]);
      }
    }
    return s;
  }

  WeightVector to_dense(std::size_t d) const {
    WeightVector w(d);
    for (std::size_t k = 0; k < indices.size(); ++k) w[indices[k]] = values[k];
    return w;
  }

  std::size_t nnz() const noexcept { return indices.size(); }
};

/// d x p matrix whose columns are the local solutions, stored sparse.
class LocalSolutionMatrix {
 public:
  explicit LocalSolutionMatrix(std::size_t d) : d_(d) {}

  LocalSolutionMatrix(std::size_t d, std::vector<SparseWeights> columns)
      : d_(d), columns_(std::move(columns)) {
    for (const auto& c : columns_) check(c);
  }

  static LocalSolutionMatrix from_dense(std::span<const WeightVector> ws) {
    if (ws.empty()) throw InvalidArgument("need at least one local solution");
    LocalSolutionMatrix W(ws.front().size());
    for (const auto& w : ws) W.add_column(w);
    return W;
  }

  void add_column(const WeightVector& w) {
    if (w.size() != d_) throw InvalidArgument("local solution dimension mismatch");
    columns_.push_back(SparseWeights::from_dense(w));
  }

  void add_column(SparseWeights c) {
    check(c);
    columns_.push_back(std::move(c));
  }

  std::size_t n_features() const noexcept { return d_; }
  std::size_t n_columns() const noexcept { return columns_.size(); }
  const SparseWeights& column(std::size_t k) const { return columns_[k]; }

  bool all_zero() const noexcept {
    return std::all_of(columns_.begin(), columns_.end(),
                       [](const SparseWeights& c) {
                         return std::all_of(c.values.begin(), c.values.end(),
                                            [](double v) { return v == 0.0; });
                       });
  }

  /// W v
  WeightVector combine(std::span<const double> v) const {
    if (v.size() != columns_.size()) throw InvalidArgument("combine: weight count mismatch");
    WeightVector w(d_);
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      if (v[k] == 0.0) continue;
      const auto& c = columns_[k];
      for (std::size_t e = 0; e < c.nnz(); ++e) w[c.indices[e]] += v[k] * c.values[e];
    }
    return w;
  }

 private:
  void check(const SparseWeights& c) const {
    if (c.indices.size() != c.values.size()) throw InvalidArgument("ragged sparse column");
    for (const auto j : c.indices) {
      if (j >= d_) throw InvalidArgument("sparse column index out of range");
    }
  }

  std::size_t d_;
  std::vector<SparseWeights> columns_;
};

/// Uniform average of the local solutions.
inline WeightVector naive_average(const LocalSolutionMatrix& W) {
  const auto p = W.n_columns();
  if (p == 0) throw InvalidArgument("naive_average needs at least one column");
  return W.combine(std::vector<double>(p, 1.0 / static_cast<double>(p)));
}

struct OwaConfig {
  /// Default: 7 log-spaced values from 1e-4 to 1e1.
  std::vector<double> lambda_cv_grid = default_grid();
  std::size_t cv_folds = 3;
  std::uint64_t seed = 0;
  /// Penalize ||v||_2^2 instead of ||v||_2.
  bool squared_penalty = false;

  static std::vector<double> default_grid() {
    std::vector<double> g;
    for (int e = 0; e < 7; ++e) g.push_back(std::pow(10.0, -4.0 + 5.0 * e / 6.0));
    return g;
  }

  void validate() const {
    if (lambda_cv_grid.empty()) throw InvalidArgument("lambda_cv grid is empty");
    for (const double l : lambda_cv_grid) {
      if (!(l >= 0.0)) throw InvalidArgument("lambda_cv values must be nonnegative");
    }
    if (cv_folds < 2) throw InvalidArgument("need at least 2 CV folds");
  }
};

struct OwaResult {
  WeightVector w;
  std::vector<double> v;
  double lambda_cv = 0.0;
  std::vector<double> cv_loss;  // mean validation loss per grid entry
  bool degenerate = false;      // every local solution was zero
};

// Dense row-major n x p matrix used for the projected design X W.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNormSmoothing = 1e-12;

struct RidgeOptions {
  bool squared_penalty = false;
  double grad_tol = 1e-8;
  std::size_t max_newton = 100;
};

/// Ridge-penalized mean logistic loss, with the unsquared norm smoothed as
/// sqrt(||v||^2 + eps).
inline double ridge_logistic_objective(const DenseMatrix& Z, std::span<const std::uint8_t> y,
                                       std::span<const double> v, double lambda_cv,
                                       bool squared_penalty = false) {
  const Eigen::Map<const Eigen::VectorXd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
  const Eigen::VectorXd m = Z * vv;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < m.size(); ++i) loss += logistic_loss(y[static_cast<std::size_t>(i)], m[i]);
  loss /= static_cast<double>(std::max<Eigen::Index>(m.size(), 1));
  const double sq = vv.squaredNorm();
  return loss + lambda_cv * (squared_penalty ? sq : std::sqrt(sq + kNormSmoothing));
}

/**
 * Second-stage fit: minimizes (1/n) sum l(y_i, z_iᵀv) + lambda_cv ||v||_2
 * by damped Newton until the gradient infinity-norm drops below grad_tol.
 *
 * For the unsquared norm, v = 0 is returned exactly when it satisfies the
 * subgradient condition ||∇loss(0)||_2 <= lambda_cv.
 */
inline std::vector<double> ridge_logistic_solve(const DenseMatrix& Z,
                                                std::span<const std::uint8_t> y,
                                                double lambda_cv,
                                                const RidgeOptions& opts = {}) {
  if (!(lambda_cv >= 0.0)) throw InvalidArgument("lambda_cv must be nonnegative");
  const auto n = Z.rows();
  const auto p = Z.cols();
  if (static_cast<std::size_t>(n) != y.size()) throw InvalidArgument("label count mismatch");
  if (n == 0) throw InvalidArgument("ridge_logistic_solve needs samples");
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[static_cast<std::size_t>(i)];

  auto loss_grad = [&](const Eigen::VectorXd& v, Eigen::VectorXd& prob) {
    const Eigen::VectorXd m = Z * v;
    prob.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) prob[i] = expit(m[i]);
    return Eigen::VectorXd(Z.transpose() * (prob - yv) * inv_n);
  };

  if (!opts.squared_penalty) {
    Eigen::VectorXd prob;
    const Eigen::VectorXd g0 = loss_grad(Eigen::VectorXd::Zero(p), prob);
    if (g0.norm() <= lambda_cv) return std::vector<double>(static_cast<std::size_t>(p), 0.0);
  }

  auto objective = [&](const Eigen::VectorXd& v) {
    return ridge_logistic_objective(Z, y, std::span(v.data(), static_cast<std::size_t>(p)),
                                    lambda_cv, opts.squared_penalty);
  };

  auto full_gradient = [&](const Eigen::VectorXd& v, Eigen::VectorXd& prob) {
    Eigen::VectorXd g = loss_grad(v, prob);
    if (opts.squared_penalty) {
      g += 2.0 * lambda_cv * v;
    } else {
      g += lambda_cv * v / std::sqrt(v.squaredNorm() + kNormSmoothing);
    }
    return g;
  };

  Eigen::VectorXd v = Eigen::VectorXd::Constant(p, 1.0 / static_cast<double>(p));
  double f = objective(v);
  Eigen::VectorXd prob;
  Eigen::VectorXd g = full_gradient(v, prob);
  for (std::size_t it = 0; it < opts.max_newton; ++it) {
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm < opts.grad_tol) return std::vector<double>(v.data(), v.data() + p);

    const Eigen::VectorXd dw = (prob.array() * (1.0 - prob.array())).matrix() * inv_n;
    Eigen::MatrixXd H = Z.transpose() * dw.asDiagonal() * Z;
    if (opts.squared_penalty) {
      H.diagonal().array() += 2.0 * lambda_cv;
    } else {
      const double s = std::sqrt(v.squaredNorm() + kNormSmoothing);
      H += lambda_cv * (Eigen::MatrixXd::Identity(p, p) / s - v * v.transpose() / (s * s * s));
    }
    // Tiny ridge keeps the factorization defined on flat directions.
    H.diagonal().array() += 1e-12;
    const Eigen::VectorXd step = H.ldlt().solve(-g);
    const double slope = g.dot(step);

    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd v_new;
    double f_new = f;
    for (int k = 0; k < 60 && !accepted; ++k, t *= 0.5) {
      v_new = v + t * step;
      f_new = objective(v_new);
      accepted = f_new < f && f_new <= f + 1e-4 * t * slope;
    }
    Eigen::VectorXd prob_new;
    Eigen::VectorXd g_new;
    if (!accepted) {
      // Close to the minimizer the decrease falls below the resolution of f;
      // take the full Newton step if it still shrinks the gradient.
      v_new = v + step;
      f_new = objective(v_new);
      g_new = full_gradient(v_new, prob_new);
      if (!(g_new.lpNorm<Eigen::Infinity>() < gnorm)) break;
    } else {
      g_new = full_gradient(v_new, prob_new);
    }
    v = std::move(v_new);
    f = f_new;
    g = std::move(g_new);
    prob = std::move(prob_new);
  }
  if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol) return std::vector<double>(v.data(), v.data() + p);
  throw Error("ridge_logistic_solve did not converge in " + std::to_string(opts.max_newton) +
              " Newton steps");
}

/// Z = X W as a dense n x p matrix.
inline DenseMatrix project_design(const SparseDesignMatrix& X, const LocalSolutionMatrix& W) {
  if (X.n_cols() != W.n_features()) throw InvalidArgument("project_design: dimension mismatch");
  DenseMatrix Z = DenseMatrix::Zero(static_cast<Eigen::Index>(X.n_rows()),
                                    static_cast<Eigen::Index>(W.n_columns()));
  for (std::size_t k = 0; k < W.n_columns(); ++k) {
    const auto& c = W.column(k);
    for (std::size_t e = 0; e < c.nnz(); ++e) {
      const auto col = X.column(c.indices[e]);
      const double wk = c.values[e];
      for (std::size_t t = 0; t < col.size(); ++t) {
        Z(col.rows[t], static_cast<Eigen::Index>(k)) += col.values[t] * wk;
      }
    }
  }
  return Z;
}

/**
 * Optimal weighted average: projects the merge node's data onto the span of
 * the local solutions, picks lambda_cv by k-fold CV on mean validation loss,
 * refits on all of `sub` and returns W v.
 */
inline OwaResult owa_merge(const LocalSolutionMatrix& W, const LabeledDataset& sub,
                           const OwaConfig& config = {}) {
  config.validate();
  if (sub.n_rows() == 0) throw InvalidArgument("owa_merge needs a non-empty subsample");
  const auto p = W.n_columns();
  OwaResult out;
  if (p == 0) throw InvalidArgument("owa_merge needs at least one column");
  if (W.all_zero()) {
    out.w = WeightVector(W.n_features());
    out.v.assign(p, 0.0);
    out.degenerate = true;
    return out;
  }
  const DenseMatrix Z = project_design(sub.X(), W);
  const auto n = sub.n_rows();
  const auto y = sub.y();
  const RidgeOptions ropts{config.squared_penalty};

  const auto folds = std::min(config.cv_folds, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t r = 0; r < n; ++r) fold_of[order[r]] = r % folds;

  struct Fold {
    DenseMatrix Z_train, Z_val;
    std::vector<std::uint8_t> y_train, y_val;
  };
  std::vector<Fold> fold_data(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> tr, va;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
    auto& fd = fold_data[f];
    fd.Z_train = Z(tr, Eigen::all);
    fd.Z_val = Z(va, Eigen::all);
    for (const auto i : tr) fd.y_train.push_back(y[static_cast<std::size_t>(i)]);
    for (const auto i : va) fd.y_val.push_back(y[static_cast<std::size_t>(i)]);
  }

  out.cv_loss.assign(config.lambda_cv_grid.size(), 0.0);
  std::size_t best = 0;
  for (std::size_t g = 0; g < config.lambda_cv_grid.size(); ++g) {
    double total = 0.0;
    for (const auto& fd : fold_data) {
      if (fd.y_train.empty() || fd.y_val.empty()) continue;
      const auto v = ridge_logistic_solve(fd.Z_train, fd.y_train, config.lambda_cv_grid[g], ropts);
      const Eigen::Map<const Eigen::VectorXd> vv(v.data(), static_cast<Eigen::Index>(p));
      const Eigen::VectorXd m = fd.Z_val * vv;
      double loss = 0.0;
      for (Eigen::Index i = 0; i < m.size(); ++i) loss += logistic_loss(fd.y_val[static_cast<std::size_t>(i)], m[i]);
      total += loss / static_cast<double>(m.size());
    }
    out.cv_loss[g] = total / static_cast<double>(folds);
    if (out.cv_loss[g] < out.cv_loss[best]) best = g;
  }
  out.lambda_cv = config.lambda_cv_grid[best];
  out.v = ridge_logistic_solve(Z, y, out.lambda_cv, ropts);
  out.w = W.combine(out.v);
  return out;
}

}  // namespace proxcsl
