#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "proxcsl/harness.hpp"

using namespace proxcsl;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("proxcsl_test_" + name);
  fs::remove_all(dir);
  return dir;
}

SweepArgs small_sweep(const fs::path& out) {
  SweepArgs a;
  a.synthetic = SyntheticSpec{600, 40, 5, 0.5, 7};
  a.spec.lambda_count = 3;
  a.spec.lambda_min_ratio = 0.1;
  a.spec.replicates = 2;
  a.spec.partitions = 3;
  a.spec.seed = 5;
  a.oracle = false;
  a.timing = false;
  a.out_dir = out;
  return a;
}

}  // namespace

TEST(LambdaGrid, SingleValueIsLambdaMax) {
  const auto ds = oracle::random_dataset(50, 6, 0.5, 1);
  SweepSpec s;
  s.lambda_count = 1;
  const auto g = lambda_grid(ds, s);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0], lambda_max(ds));
}

TEST(LambdaGrid, ConstantRatioAndEndpoints) {
  const auto ds = oracle::random_dataset(50, 6, 0.5, 2);
  SweepSpec s;
  s.lambda_count = 9;
  s.lambda_min_ratio = 1e-3;
  const auto g = lambda_grid(ds, s);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_NEAR(g.back() / g.front(), 1e-3, 1e-15);
  for (std::size_t i = 1; i + 1 < g.size(); ++i) {
    EXPECT_NEAR(g[i] / g[i - 1], g[i + 1] / g[i], 1e-12);
  }
}

TEST(LambdaMax, MatchesDenseGradient) {
  const auto ds = oracle::random_dataset(80, 7, 0.5, 3);
  const oracle::Vec g = oracle::smooth_gradient(oracle::to_dense(ds.X()), oracle::labels(ds),
                                                oracle::Vec::Zero(7));
  EXPECT_NEAR(lambda_max(ds), g.lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(LambdaMax, ZeroIsAnError) {
  // Balanced labels on a single constant-zero feature give a zero gradient.
  const LabeledDataset ds(SparseDesignMatrix::from_dense(2, 1, std::vector{0.0, 0.0}), {0, 1});
  EXPECT_THROW(lambda_max(ds), InvalidArgument);
}

TEST(LambdaMax, SolutionIsZeroThere) {
  const auto ds = oracle::random_dataset(120, 10, 0.5, 4);
  const auto w = solve_local(ds, {lambda_max(ds), 0.0}).w;
  EXPECT_EQ(w.nnz(), 0u);
}

TEST(Evaluate, Examples) {
  const LabeledDataset ds(SparseDesignMatrix::from_dense(4, 2, std::vector{1.0, 0.0,   //
                                                                           -1.0, 0.0,  //
                                                                           0.0, 1.0,   //
                                                                           0.0, 0.0}),
                          {1, 0, 0, 0});
  const auto e = evaluate(WeightVector{2.0, 0.0}, ds);
  // Rows 3 and 4 have margin 0 and are predicted as 0.
  EXPECT_DOUBLE_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.nnz, 1u);
  EXPECT_DOUBLE_EQ(evaluate(WeightVector{-1.0, 1.0}, ds).accuracy, 0.25);
  EXPECT_THROW(evaluate(WeightVector(3), ds), InvalidArgument);
}

TEST(ObjectiveError, MatchesIndependentRecomputation) {
  const auto ds = oracle::random_dataset(90, 8, 0.5, 5);
  const WeightVector w{0.1, 0.0, -0.3, 0.0, 0.2, 0.0, 0.0, 0.5};
  const double ref = 0.6;
  const double obj = oracle::objective(oracle::to_dense(ds.X()), oracle::labels(ds),
                                       oracle::to_vec(w.values()), 0.01, 0.02);
  EXPECT_NEAR(objective_error(w, ds, {0.01, 0.02}, ref), 100 * (obj - ref) / ref, 1e-10);
}

TEST(SupportMetrics, Examples) {
  const WeightVector w{1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  auto same = support_metrics(w, w);
  EXPECT_EQ(same.l2_distance, 0.0);
  EXPECT_EQ(same.support_consensus, 1.0);

  auto extra = w;
  extra[5] = 0.5;
  EXPECT_DOUBLE_EQ(support_metrics(extra, w).support_consensus, 0.9);
  EXPECT_DOUBLE_EQ(support_metrics(extra, w).l2_distance, 0.5);

  auto swapped = w;
  swapped[0] = 0.0;
  swapped[1] = 1.0;
  EXPECT_DOUBLE_EQ(support_metrics(swapped, w).support_consensus, 0.8);
  EXPECT_DOUBLE_EQ(support_metrics(swapped, w).l2_distance, std::sqrt(2.0));
  EXPECT_THROW(support_metrics(WeightVector(3), w), InvalidArgument);
}

TEST(OracleSolve, CacheRoundTripIsExact) {
  const auto dir = fresh_dir("oracle_cache");
  const auto ds = oracle::random_dataset(150, 12, 0.5, 6);
  const Regularization reg{0.2 * lambda_max(ds), 0.003};
  const auto a = oracle_solve(ds, reg, dir);
  ASSERT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 1);
  const auto b = oracle_solve(ds, reg, dir);
  EXPECT_EQ(a.w, b.w);
  EXPECT_EQ(a.objective, b.objective);
  // A different lambda gets its own entry.
  oracle_solve(ds, {reg.lambda1 * 0.5, reg.lambda2}, dir);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}), 2);
  fs::remove_all(dir);
}

TEST(OracleSolve, CorruptCacheIsReported) {
  const auto dir = fresh_dir("oracle_corrupt");
  const auto ds = oracle::random_dataset(60, 5, 0.5, 7);
  const Regularization reg{0.1 * lambda_max(ds), 0.0};
  oracle_solve(ds, reg, dir);
  const auto file = fs::directory_iterator(dir)->path();
  {
    std::ofstream out(file);
    out << "0x1p-1 5 2\n7 0x1p0\n";
  }
  EXPECT_THROW(oracle_solve(ds, reg, dir), Error);
  fs::remove_all(dir);
}

TEST(RunSweep, RowsPerMethodAndLambda) {
  const auto dir = fresh_dir("rows");
  const auto out = run_sweep(small_sweep(dir));
  ASSERT_EQ(out.rows.size(), 6u);
  for (const auto& r : out.rows) {
    EXPECT_TRUE(r.method == "owa" || r.method == "proxcsl") << r.method;
    EXPECT_EQ(r.replicates, 2u);
    EXPECT_TRUE(r.nnz_std.has_value());
    EXPECT_FALSE(r.objective_error_mean.has_value());
    EXPECT_TRUE(r.support_consensus_mean.has_value());
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const auto& a = out.rows[i - 1];
    const auto& b = out.rows[i];
    EXPECT_TRUE(a.method < b.method || (a.method == b.method && a.lambda > b.lambda));
  }
  EXPECT_FALSE(out.timing_csv.has_value());
  EXPECT_FALSE(fs::exists(dir / "timing.csv"));
  fs::remove_all(dir);
}

TEST(RunSweep, SingleReplicateLeavesStdEmpty) {
  const auto dir = fresh_dir("single");
  auto args = small_sweep(dir);
  args.spec.replicates = 1;
  args.spec.lambda_count = 1;
  const auto out = run_sweep(args);
  for (const auto& r : out.rows) EXPECT_FALSE(r.nnz_std.has_value());
  const auto csv = slurp(out.metrics_csv);
  // lambda_max row: nnz_mean 0, nnz_std empty.
  EXPECT_NE(csv.find(",1,0,,"), std::string::npos) << csv;
  fs::remove_all(dir);
}

TEST(RunSweep, RerunIsByteIdentical) {
  const auto d1 = fresh_dir("det1");
  const auto d2 = fresh_dir("det2");
  auto a = small_sweep(d1);
  a.oracle = true;
  a.cache_dir = d1 / "cache";
  auto b = small_sweep(d2);
  b.oracle = true;
  b.cache_dir = d2 / "cache";
  b.threads = 3;
  run_sweep(a);
  run_sweep(b);
  EXPECT_EQ(slurp(d1 / "metrics.csv"), slurp(d2 / "metrics.csv"));
  EXPECT_EQ(slurp(d1 / "convergence.csv"), slurp(d2 / "convergence.csv"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(RunSweep, OracleAddsFullDataRows) {
  const auto dir = fresh_dir("oracle");
  auto args = small_sweep(dir);
  args.oracle = true;
  args.timing = true;
  const auto out = run_sweep(args);
  ASSERT_EQ(out.rows.size(), 9u);
  for (const auto& r : out.rows) {
    ASSERT_TRUE(r.objective_error_mean.has_value());
    if (r.method == "full_data") {
      EXPECT_EQ(*r.objective_error_mean, 0.0);
    } else {
      // Distributed estimates cannot beat the full-data optimum by more
      // than its solve tolerance.
      EXPECT_GT(*r.objective_error_mean, -1e-6);
    }
  }
  ASSERT_TRUE(out.timing_csv.has_value());
  EXPECT_TRUE(fs::exists(*out.timing_csv));
  EXPECT_TRUE(fs::exists(dir / "oracle_cache"));
  fs::remove_all(dir);
}

TEST(RunSweep, ReadsLibsvmFiles) {
  const auto dir = fresh_dir("libsvm");
  fs::create_directories(dir);
  const auto syn = generate_synthetic({300, 15, 4, 0.5, 2});
  {
    std::ofstream f(dir / "data.svm");
    write_libsvm(f, syn.data);
  }
  auto args = small_sweep(dir / "out");
  args.synthetic.reset();
  args.data_path = dir / "data.svm";
  args.n_features = 15;
  const auto out = run_sweep(args);
  EXPECT_EQ(out.rows.size(), 6u);
  for (const auto& r : out.rows) EXPECT_FALSE(r.support_consensus_mean.has_value());
  fs::remove_all(dir);
}

TEST(RunSweep, Errors) {
  const auto dir = fresh_dir("errors");
  auto args = small_sweep(dir);
  args.data_path = "x.svm";
  EXPECT_THROW(run_sweep(args), InvalidArgument);
  args.synthetic.reset();
  args.data_path = dir / "missing.svm";
  try {
    run_sweep(args);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("missing.svm"), std::string::npos);
  }
  args = small_sweep(dir);
  args.spec.replicates = 0;
  EXPECT_THROW(run_sweep(args), InvalidArgument);
  fs::remove_all(dir);
}

TEST(RunSweep, UnwritableOutputNamesPath) {
  const auto dir = fresh_dir("unwritable");
  fs::create_directories(dir);
  // A regular file where the output directory should be.
  { std::ofstream(dir / "blocked") << "x"; }
  auto args = small_sweep(dir / "blocked");
  try {
    run_sweep(args);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("blocked"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}
