#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "proxcsl/objective.hpp"
#include "proxcsl/prox_solver.hpp"

using namespace proxcsl;

namespace {

WeightVector random_weights(std::size_t d, std::mt19937_64& rng, double scale = 1.0,
                            double zero_frac = 0.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::uniform_real_distribution<double> u(0, 1);
  WeightVector w(d);
  for (std::size_t j = 0; j < d; ++j) w[j] = u(rng) < zero_frac ? 0.0 : g(rng);
  return w;
}

oracle::Vec as_vec(const WeightVector& w) { return oracle::to_vec(w.values()); }

}  // namespace

TEST(LogisticLoss, ValuesAtZero) {
  EXPECT_NEAR(logistic_loss(0, 0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(logistic_loss(1, 0.0), std::log(2.0), 1e-15);
}

TEST(LogisticLoss, LargeMarginsDoNotOverflow) {
  EXPECT_NEAR(logistic_loss(1, 1000.0), 0.0, 1e-300);
  EXPECT_NEAR(logistic_loss(0, -1000.0), 0.0, 1e-300);
  EXPECT_NEAR(logistic_loss(0, 1000.0), 1000.0, 1e-12);
  EXPECT_NEAR(logistic_loss(1, -1000.0), 1000.0, 1e-12);
  EXPECT_TRUE(std::isfinite(logistic_loss(1, 40.0)));
  EXPECT_GT(logistic_loss(1, 40.0), 0.0);
}

TEST(LogisticLoss, MatchesExtendedPrecisionOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int t = 0; t < 1000; ++t) {
    const double z = u(rng);
    const int y = t % 2;
    const double ref = oracle::loss(y, z);
    EXPECT_NEAR(logistic_loss(y, z), ref, 1e-14 * std::max(1.0, std::abs(ref)));
  }
}

TEST(LogisticLoss, RejectsBadLabel) { EXPECT_THROW(logistic_loss(2, 0.0), InvalidArgument); }

TEST(LocalObjective, ZeroWeightsGiveLogTwo) {
  const auto ds = oracle::random_dataset(30, 5, 0.5, 1);
  EXPECT_NEAR(local_objective(ds, WeightVector(5), {0.3, 0.2}), std::log(2.0), 1e-15);
}

TEST(LocalObjective, PenaltyIsAdditive) {
  const auto ds = oracle::random_dataset(30, 4, 0.5, 1);
  const WeightVector w{0.25, -0.5, 0.0, 0.25};
  const double loss = smooth_loss(ds, w);
  EXPECT_NEAR(local_objective(ds, w, {10.0, 0.0}), loss + 10.0, 1e-12);
  EXPECT_NEAR(local_objective(ds, w, {10.0, 2.0}), loss + 10.0 + 0.375, 1e-12);
}

TEST(LocalObjective, MatchesBruteForce) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 50, d = 1 + rng() % 20;
    const auto ds = oracle::random_dataset(n, d, 0.4, rng());
    const auto w = random_weights(d, rng, 2.0, 0.3);
    const Regularization reg{0.01 * (rng() % 10), 0.01 * (rng() % 10)};
    const double ref = oracle::objective(oracle::to_dense(ds.X()), oracle::labels(ds), as_vec(w),
                                         reg.lambda1, reg.lambda2);
    EXPECT_NEAR(local_objective(ds, w, reg), ref, 1e-12 * std::abs(ref));
  }
}

TEST(LocalObjective, DimensionMismatchThrows) {
  const auto ds = oracle::random_dataset(5, 3, 0.5, 1);
  EXPECT_THROW(local_objective(ds, WeightVector(4), {}), InvalidArgument);
  EXPECT_THROW(local_gradient(ds, WeightVector(2)), InvalidArgument);
}

TEST(LocalObjective, ConvexAlongLines) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int t = 0; t < 200; ++t) {
    const auto ds = oracle::random_dataset(20, 6, 0.5, rng());
    const auto a = random_weights(6, rng, 3.0), b = random_weights(6, rng, 3.0);
    const double theta = u(rng);
    WeightVector mid(6);
    for (std::size_t j = 0; j < 6; ++j) mid[j] = theta * a[j] + (1 - theta) * b[j];
    const Regularization reg{0.1, 0.05};
    EXPECT_LE(local_objective(ds, mid, reg),
              theta * local_objective(ds, a, reg) + (1 - theta) * local_objective(ds, b, reg) +
                  1e-12);
  }
}

TEST(LocalGradient, ZeroWeightsBalancedForm) {
  const auto ds = oracle::random_dataset(40, 7, 0.5, 2);
  const auto g = local_gradient(ds, WeightVector(7));
  const auto X = oracle::to_dense(ds.X());
  const oracle::Vec r = (0.5 - oracle::labels(ds).array()).matrix();
  const oracle::Vec ref = X.transpose() * r / 40.0;
  for (int j = 0; j < 7; ++j) EXPECT_NEAR(g.g[j], ref[j], 1e-14);
}

TEST(LocalGradient, EmptyColumnOnlyCarriesRidgeTerm) {
  auto ds = oracle::random_dataset(20, 3, 0.8, 2).with_n_features(5);
  WeightVector w{0.2, -0.1, 0.3, 1.5, -2.0};
  const auto g = local_gradient(ds, w, 0.7);
  EXPECT_DOUBLE_EQ(g.g[3], 0.7 * 1.5);
  EXPECT_DOUBLE_EQ(g.g[4], 0.7 * -2.0);
}

TEST(LocalGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 50, d = 1 + rng() % 20;
    const auto ds = oracle::random_dataset(n, d, 0.5, rng());
    const auto w = random_weights(d, rng);
    const double l2 = 0.1 * (t % 3);
    const auto g = local_gradient(ds, w, l2);
    const auto X = oracle::to_dense(ds.X());
    const auto y = oracle::labels(ds);
    const auto fd = oracle::finite_difference(
        [&](const oracle::Vec& v) { return oracle::objective(X, y, v, 0.0, l2); }, as_vec(w));
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(g.g[j], fd[static_cast<Eigen::Index>(j)], 1e-5);
  }
}

TEST(CslObjective, ReducesToLocalObjective) {
  const auto ds = oracle::random_dataset(30, 5, 0.5, 4);
  std::mt19937_64 rng(1);
  const auto w = random_weights(5, rng), anchor = random_weights(5, rng);
  const GradientSnapshot zero{std::vector<double>(5, 0.0), anchor};
  const Regularization reg{0.05, 0.01};
  EXPECT_EQ(csl_objective(ds, w, anchor, zero, 0.0, reg), local_objective(ds, w, reg));
  EXPECT_NEAR(csl_objective(ds, w, anchor, zero, 2.0, reg),
              local_objective(ds, w, reg) +
                  (as_vec(w) - as_vec(anchor)).squaredNorm(),
              1e-12);
}

TEST(CslObjective, SinglePartitionCorrectionVanishes) {
  const auto ds = oracle::random_dataset(30, 5, 0.5, 4);
  std::mt19937_64 rng(2);
  const auto anchor = random_weights(5, rng);
  const auto global = local_gradient(ds, anchor);
  const auto correction = global - local_gradient(ds, anchor);
  for (const double c : correction.g) EXPECT_EQ(c, 0.0);
}

TEST(CslObjective, MatchesTermByTermOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 30; ++t) {
    const auto ds = oracle::random_dataset(25, 6, 0.5, rng());
    const auto w = random_weights(6, rng), anchor = random_weights(6, rng);
    const GradientSnapshot c{random_weights(6, rng).values(), anchor};
    const double alpha = 0.3, l1 = 0.02, l2 = 0.04;
    const double ref = oracle::objective(oracle::to_dense(ds.X()), oracle::labels(ds), as_vec(w), l1, l2) +
                       oracle::to_vec(c.g).dot(as_vec(w)) +
                       0.5 * alpha * (as_vec(w) - as_vec(anchor)).squaredNorm();
    EXPECT_NEAR(csl_objective(ds, w, anchor, c, alpha, {l1, l2}), ref, 1e-12 * std::abs(ref));
  }
}

TEST(CslObjective, SmoothGradientAtAnchorIsGlobalGradient) {
  // Two partitions: the surrogate built on the first has, at the anchor, the
  // gradient of the pooled smooth loss.
  const auto full = oracle::random_dataset(60, 5, 0.6, 9);
  const auto parts = partition(full, 2, 1);
  const auto& part = parts.partitions[0];
  std::mt19937_64 rng(3);
  const auto anchor = random_weights(5, rng);
  const auto global = local_gradient(full, anchor);
  const auto correction = global - local_gradient(part, anchor);
  const double alpha = 0.5;
  const auto fd = oracle::finite_difference(
      [&](const oracle::Vec& v) {
        const WeightVector w(std::vector<double>(v.data(), v.data() + v.size()));
        return csl_objective(part, w, anchor, correction, alpha, {0.0, 0.0});
      },
      as_vec(anchor));
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(fd[j], global.g[j], 1e-7);
}

TEST(CslObjective, DimensionMismatchThrows) {
  const auto ds = oracle::random_dataset(5, 3, 0.5, 1);
  const GradientSnapshot c{std::vector<double>(2, 0.0), WeightVector(3)};
  EXPECT_THROW(csl_objective(ds, WeightVector(3), WeightVector(3), c, 0.0, {}), InvalidArgument);
}

TEST(CurvatureAt, ZeroWeightsGiveQuarter) {
  const auto ds = oracle::random_dataset(20, 4, 0.5, 1);
  const auto s = curvature_at(ds, WeightVector(4), 0.0, {});
  for (const double v : s.d_weights) EXPECT_EQ(v, 0.25);
  for (const double v : s.xdelta) EXPECT_EQ(v, 0.0);
}

TEST(CurvatureAt, DiagonalMatchesExplicitHessian) {
  const auto ds = oracle::random_dataset(5, 4, 1.0, 6);
  std::mt19937_64 rng(4);
  const auto w = random_weights(4, rng);
  const Regularization reg{0.0, 0.3};
  const auto s = curvature_at(ds, w, 0.2, reg);
  const auto X = oracle::to_dense(ds.X());
  const oracle::Vec m = X * as_vec(w);
  oracle::Vec dw(5);
  for (int i = 0; i < 5; ++i) dw[i] = oracle::sigmoid(m[i]) * (1 - oracle::sigmoid(m[i]));
  const oracle::Dense H = X.transpose() * dw.asDiagonal() * X / 5.0;
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(s.hess_diag[j], H(j, j) + 0.3 + 0.2, 1e-12);
  for (int i = 0; i < 5; ++i) {
    EXPECT_GT(s.d_weights[i], 0.0);
    EXPECT_LE(s.d_weights[i], 0.25);
  }
}

TEST(CurvatureAt, DampingShiftsDiagonalExactly) {
  const auto ds = oracle::random_dataset(30, 6, 0.5, 6);
  std::mt19937_64 rng(4);
  const auto w = random_weights(6, rng);
  const auto a = curvature_at(ds, w, 0.0, {});
  const auto b = curvature_at(ds, w, 0.75, {});
  for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(b.hess_diag[j] - a.hess_diag[j], 0.75);
}

TEST(CurvatureAt, SaturatedSamplesAreFloored) {
  const LabeledDataset ds(SparseDesignMatrix::from_triplets(2, 1, {{0, 0, 1.0}, {1, 0, -1.0}}),
                          {1, 0});
  const auto s = curvature_at(ds, WeightVector{1000.0}, 0.0, {});
  for (const double v : s.d_weights) EXPECT_EQ(v, kMinCurvatureWeight);
  EXPECT_GT(s.hess_diag[0], 0.0);
}

TEST(CurvatureAt, IncrementalXdeltaMatchesRecomputation) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto ds = oracle::random_dataset(40, 15, 0.3, rng());
    const auto w = random_weights(15, rng, 1.0, 0.5);
    auto state = curvature_at(ds, w, 0.01, {0.02, 0.0});
    auto base = local_gradient(ds, w).g;
    WeightVector delta(15);
    for (int pass = 0; pass < 3; ++pass) inner_cd_pass(ds, state, delta, base, w, {0.02, 0.0});
    std::vector<double> fresh(40);
    ds.X().multiply(delta.span(), fresh);
    for (int i = 0; i < 40; ++i) EXPECT_NEAR(state.xdelta[i], fresh[i], 1e-10);
  }
}
