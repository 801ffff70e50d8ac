#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "proxcsl/data.hpp"
#include "proxcsl/error.hpp"
#include "proxcsl/merge.hpp"
#include "proxcsl/objective.hpp"
#include "proxcsl/orchestrator.hpp"
#include "proxcsl/prox_solver.hpp"
#include "proxcsl/weights.hpp"

namespace proxcsl {

struct SweepSpec {
  std::size_t lambda_count = 80;
  double lambda_min_ratio = 1e-4;
  std::size_t replicates = 5;
  std::size_t partitions = 8;
  std::size_t k_updates = 2;
  InitMethod init = InitMethod::Owa;
  UpdateMode mode = UpdateMode::MainNode;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  void validate() const {
    if (lambda_count < 1) throw InvalidArgument("lambda_count must be at least 1");
    if (replicates < 1) throw InvalidArgument("replicates must be at least 1");
    if (!(lambda_min_ratio > 0.0 && lambda_min_ratio <= 1.0)) {
      throw InvalidArgument("lambda_min_ratio must lie in (0, 1]");
    }
    if (partitions < 1) throw InvalidArgument("partitions must be at least 1");
  }
};

struct MetricRow {
  std::string method;
  double lambda = 0.0;
  std::size_t replicates = 0;
  double nnz_mean = 0.0;
  std::optional<double> nnz_std;
  double accuracy_mean = 0.0;
  std::optional<double> accuracy_std;
  std::optional<double> objective_error_mean;
  std::optional<double> l2_distance_mean;
  std::optional<double> support_consensus_mean;
  double bytes_mean = 0.0;
};

/// Smallest L1 strength for which w = 0 is optimal: ||∇loss(0)||_inf.
inline double lambda_max(const LabeledDataset& train) {
  if (train.n_rows() == 0) throw InvalidArgument("lambda_max needs training data");
  const auto g = local_gradient(train, WeightVector(train.n_features()));
  double m = 0.0;
  for (const double v : g.g) m = std::max(m, std::abs(v));
  if (!(m > 0.0)) throw InvalidArgument("lambda_max is zero (constant labels or empty features)");
  return m;
}

/// Log-spaced grid from lambda_max down to lambda_max * lambda_min_ratio.
inline std::vector<double> lambda_grid(const LabeledDataset& train, const SweepSpec& spec) {
  spec.validate();
  const double top = lambda_max(train);
  std::vector<double> grid(spec.lambda_count);
  grid[0] = top;
  if (spec.lambda_count == 1) return grid;
  const double log_ratio = std::log(spec.lambda_min_ratio);
  const auto last = static_cast<double>(spec.lambda_count - 1);
  for (std::size_t i = 1; i < spec.lambda_count; ++i) {
    grid[i] = top * std::exp(log_ratio * static_cast<double>(i) / last);
  }
  return grid;
}

struct Evaluation {
  double accuracy;
  std::size_t nnz;
};

/// Predicts 1 iff xᵀw > 0 (ties go to 0).
inline Evaluation evaluate(const WeightVector& model, const LabeledDataset& test) {
  detail::check_dims(test, model.size());
  const auto& rows = test.X().rows();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.n_rows(); ++i) {
    const auto r = rows.row(i);
    double m = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) m += r.values[k] * model[r.cols[k]];
    const std::uint8_t pred = m > 0.0 ? 1 : 0;
    correct += pred == test.y()[i];
  }
  const double acc =
      test.n_rows() ? static_cast<double>(correct) / static_cast<double>(test.n_rows()) : 0.0;
  return {acc, model.nnz()};
}

/// 100 (L(model) - oracle) / oracle, using the full regularized objective.
inline double objective_error(const WeightVector& model, const LabeledDataset& train,
                              const Regularization& reg, double oracle_objective) {
  return 100.0 * (local_objective(train, model, reg) - oracle_objective) / oracle_objective;
}

struct SupportMetrics {
  double l2_distance;
  double support_consensus;
};

/// L2 distance to w*, and the fraction of coordinates whose zero/nonzero
/// status agrees with w*.
inline SupportMetrics support_metrics(const WeightVector& model, const WeightVector& w_star) {
  if (model.size() != w_star.size()) throw InvalidArgument("support_metrics: dimension mismatch");
  double sq = 0.0;
  std::size_t agree = 0;
  for (std::size_t j = 0; j < model.size(); ++j) {
    const double diff = model[j] - w_star[j];
    sq += diff * diff;
    agree += (model[j] != 0.0) == (w_star[j] != 0.0);
  }
  const double consensus =
      model.size() ? static_cast<double>(agree) / static_cast<double>(model.size()) : 1.0;
  return {std::sqrt(sq), consensus};
}

/// Tight settings for full-data reference solves.
inline SolverConfig oracle_config() {
  SolverConfig c = SolverConfig::local_fit();
  c.max_outer = 100;
  c.max_inner = 200;
  c.inner_tol = 1e-10;
  c.outer_tol = 1e-13;
  return c;
}

namespace detail {

/// FNV-1a, 64-bit.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void span(std::span<const T> s) {
    bytes(s.data(), s.size_bytes());
  }
  template <class T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
  std::uint64_t digest() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t dataset_hash(const LabeledDataset& data) {
  Fnv1a h;
  h.value(data.n_rows());
  h.value(data.n_features());
  h.span(data.X().col_ptr());
  h.span(data.X().row_indices());
  h.span(data.X().values());
  h.span(data.y());
  return h.digest();
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string hex_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  return std::string(buf, r.ptr);
}

inline double parse_hex_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (r.ec != std::errc()) throw Error("corrupt oracle cache entry");
  return v;
}

inline std::string csv_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

inline std::string csv_field(double v) { return format_double(v); }

}  // namespace detail

struct OracleSolution {
  WeightVector w;
  double objective;
};

/**
 * Full-data reference solve with on-disk caching keyed by (dataset hash,
 * lambda1, lambda2). Pass an empty cache_dir to disable the cache.
 */
inline OracleSolution oracle_solve(const LabeledDataset& train, const Regularization& reg,
                                   const std::filesystem::path& cache_dir = {}) {
  std::filesystem::path file;
  if (!cache_dir.empty()) {
    std::ostringstream key;
    key << std::hex << detail::dataset_hash(train) << '_'
        << detail::hex_double(reg.lambda1) << '_' << detail::hex_double(reg.lambda2);
    auto name = key.str();
    std::replace(name.begin(), name.end(), '.', 'd');
    std::replace(name.begin(), name.end(), '+', 'p');
    std::replace(name.begin(), name.end(), '-', 'm');
    file = cache_dir / (name + ".oracle");
    std::ifstream in(file);
    if (in) {
      std::string obj_tok;
      std::size_t d = 0;
      std::size_t nnz = 0;
      if (in >> obj_tok >> d >> nnz && d == train.n_features()) {
        OracleSolution sol{WeightVector(d), detail::parse_hex_double(obj_tok)};
        for (std::size_t e = 0; e < nnz; ++e) {
          std::size_t j = 0;
          std::string v;
          if (!(in >> j >> v) || j >= d) throw Error("corrupt oracle cache " + file.string());
          sol.w[j] = detail::parse_hex_double(v);
        }
        return sol;
      }
    }
  }
  auto res = solve_local(train, reg, oracle_config());
  OracleSolution sol{std::move(res.w), 0.0};
  sol.objective = local_objective(train, sol.w, reg);
  if (!file.empty()) {
    std::filesystem::create_directories(cache_dir);
    std::ofstream out(file);
    if (!out) throw Error("cannot write oracle cache " + file.string());
    out << detail::hex_double(sol.objective) << ' ' << sol.w.size() << ' ' << sol.w.nnz() << '\n';
    for (std::size_t j = 0; j < sol.w.size(); ++j) {
      if (sol.w[j] != 0.0) out << j << ' ' << detail::hex_double(sol.w[j]) << '\n';
    }
  }
  return sol;
}

struct SweepArgs {
  std::optional<std::filesystem::path> data_path;
  std::optional<std::size_t> n_features;
  std::optional<SyntheticSpec> synthetic;
  SweepSpec spec;
  double lambda2 = 0.0;
  // When set, lambda2 = l2_ratio * lambda1 for each grid value.
  std::optional<double> l2_ratio;
  SolverConfig local_config = SolverConfig::local_fit();
  SolverConfig update_config;
  bool oracle = true;
  bool timing = true;
  std::size_t threads = 1;
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> cache_dir;  // default: out_dir/oracle_cache
};

struct SweepOutput {
  std::vector<MetricRow> rows;
  std::filesystem::path metrics_csv;
  std::filesystem::path convergence_csv;
  std::optional<std::filesystem::path> timing_csv;
};

inline const char* to_string(InitMethod m) { return m == InitMethod::Owa ? "owa" : "naive"; }
inline const char* to_string(UpdateMode m) {
  return m == UpdateMode::MainNode ? "main_node" : "all_node";
}

namespace detail {

struct Stat {
  std::vector<double> xs;
  void add(double x) { xs.push_back(x); }
  double mean() const {
    double s = 0.0;
    for (const double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
  }
  std::optional<double> stddev() const {
    if (xs.size() < 2) return std::nullopt;
    const double m = mean();
    double s = 0.0;
    for (const double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
  }
};

struct MethodAccumulator {
  Stat nnz, acc, obj_err, l2, consensus, bytes;
};

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

/**
 * λ-grid sweep. For each λ the distributed estimation is replicated with
 * partition seeds seed+1, seed+2, ...; the train/test split uses `seed`.
 *
 * Writes metrics.csv (one row per method and λ), convergence.csv (one row
 * per λ, replicate and iteration) and, when timing is on, timing.csv.
 */
inline SweepOutput run_sweep(const SweepArgs& args) {
  args.spec.validate();
  if (args.data_path.has_value() == args.synthetic.has_value()) {
    throw InvalidArgument("exactly one of a data path or a synthetic spec is required");
  }
  LabeledDataset full;
  std::optional<WeightVector> w_true;
  if (args.data_path) {
    full = parse_libsvm(*args.data_path, args.n_features);
  } else {
    auto syn = generate_synthetic(*args.synthetic);
    full = std::move(syn.data);
    w_true = std::move(syn.w_true);
  }
  const auto [train, test] = split_train_test(full, args.spec.test_fraction, args.spec.seed);
  full = LabeledDataset();

  const auto grid = lambda_grid(train, args.spec);
  const auto cache_dir = args.cache_dir.value_or(args.out_dir / "oracle_cache");
  std::filesystem::create_directories(args.out_dir);

  const std::string init_name = to_string(args.spec.init);
  const std::string update_name =
      args.spec.mode == UpdateMode::MainNode ? "proxcsl" : "proxcsl_all_node";

  std::vector<MetricRow> rows;
  std::ostringstream conv;
  conv << "lambda,replicate,iteration,global_objective,objective_error,nnz,test_accuracy,"
          "l2_distance,support_consensus,bytes_broadcast,bytes_collected,alpha\n";
  std::ostringstream timing;
  timing << "lambda,replicate,initial_estimator,broadcast_w,collect_grads,compute_global_grad,"
            "csl_update,single_outer_step\n";

  for (const double lambda : grid) {
    const Regularization reg{lambda, args.l2_ratio ? *args.l2_ratio * lambda : args.lambda2};
    std::optional<OracleSolution> oracle;
    if (args.oracle) oracle = oracle_solve(train, reg, cache_dir);

    std::map<std::string, detail::MethodAccumulator> acc;
    for (std::size_t r = 0; r < args.spec.replicates; ++r) {
      ProxCslOptions opts;
      opts.partitions = args.spec.partitions;
      opts.reg = reg;
      opts.local_config = args.local_config;
      opts.update_config = args.update_config;
      opts.init = args.spec.init;
      opts.k_updates = args.spec.k_updates;
      opts.mode = args.spec.mode;
      opts.seed = args.spec.seed + 1 + r;
      opts.owa.seed = args.spec.seed + 1 + r;
      opts.threads = args.threads;
      const auto run = run_proxcsl(train, opts, &test);

      std::size_t cumulative_bytes = 0;
      for (std::size_t t = 0; t < run.reports.size(); ++t) {
        const auto& rep = run.reports[t];
        const auto& w = run.iterates[t];
        cumulative_bytes += rep.bytes_broadcast + rep.bytes_collected;
        std::optional<double> err;
        if (oracle) err = 100.0 * (rep.global_objective - oracle->objective) / oracle->objective;
        std::optional<SupportMetrics> sm;
        if (w_true) sm = support_metrics(w, *w_true);
        conv << detail::format_double(lambda) << ',' << r << ',' << t << ','
             << detail::format_double(rep.global_objective) << ',' << detail::csv_field(err)
             << ',' << rep.nnz << ',' << detail::format_double(rep.test_accuracy) << ','
             << (sm ? detail::format_double(sm->l2_distance) : "") << ','
             << (sm ? detail::format_double(sm->support_consensus) : "") << ','
             << rep.bytes_broadcast << ',' << rep.bytes_collected << ','
             << detail::format_double(rep.alpha) << '\n';

        const bool is_init = t == 0;
        const bool is_final = t + 1 == run.reports.size();
        auto add = [&](const std::string& name) {
          auto& a = acc[name];
          a.nnz.add(static_cast<double>(rep.nnz));
          a.acc.add(rep.test_accuracy);
          if (err) a.obj_err.add(*err);
          if (sm) {
            a.l2.add(sm->l2_distance);
            a.consensus.add(sm->support_consensus);
          }
          a.bytes.add(static_cast<double>(cumulative_bytes));
        };
        if (is_init) add(init_name);
        if (is_final && args.spec.k_updates > 0) add(update_name);
      }
      if (args.timing) {
        PhaseTimings sum;
        std::size_t updates = 0;
        for (const auto& rep : run.reports) {
          sum.initial_estimator += rep.timings.initial_estimator;
          if (rep.iteration == 0) continue;
          ++updates;
          sum.broadcast_w += rep.timings.broadcast_w;
          sum.collect_grads += rep.timings.collect_grads;
          sum.compute_global_grad += rep.timings.compute_global_grad;
          sum.csl_update += rep.timings.csl_update;
          sum.single_outer_step += rep.timings.single_outer_step;
        }
        const double u = updates ? static_cast<double>(updates) : 1.0;
        timing << detail::format_double(lambda) << ',' << r << ','
               << detail::format_double(sum.initial_estimator) << ','
               << detail::format_double(sum.broadcast_w / u) << ','
               << detail::format_double(sum.collect_grads / u) << ','
               << detail::format_double(sum.compute_global_grad / u) << ','
               << detail::format_double(sum.csl_update / u) << ','
               << detail::format_double(sum.single_outer_step / u) << '\n';
      }
    }
    if (oracle) {
      const auto ev = evaluate(oracle->w, test);
      auto& a = acc["full_data"];
      a.nnz.add(static_cast<double>(ev.nnz));
      a.acc.add(ev.accuracy);
      a.obj_err.add(0.0);
      if (w_true) {
        const auto sm = support_metrics(oracle->w, *w_true);
        a.l2.add(sm.l2_distance);
        a.consensus.add(sm.support_consensus);
      }
      a.bytes.add(0.0);
    }
    for (const auto& [name, a] : acc) {
      MetricRow row;
      row.method = name;
      row.lambda = lambda;
      row.replicates = a.nnz.xs.size();
      row.nnz_mean = a.nnz.mean();
      row.nnz_std = a.nnz.stddev();
      row.accuracy_mean = a.acc.mean();
      row.accuracy_std = a.acc.stddev();
      if (!a.obj_err.xs.empty()) row.objective_error_mean = a.obj_err.mean();
      if (!a.l2.xs.empty()) row.l2_distance_mean = a.l2.mean();
      if (!a.consensus.xs.empty()) row.support_consensus_mean = a.consensus.mean();
      row.bytes_mean = a.bytes.mean();
      rows.push_back(std::move(row));
    }
  }

  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    if (a.method != b.method) return a.method < b.method;
    return a.lambda > b.lambda;
  });

  std::ostringstream metrics;
  metrics << "method,lambda,replicates,nnz_mean,nnz_std,accuracy_mean,accuracy_std,"
             "objective_error_mean,l2_distance_mean,support_consensus_mean,bytes_mean\n";
  for (const auto& r : rows) {
    metrics << r.method << ',' << detail::format_double(r.lambda) << ',' << r.replicates << ','
            << detail::format_double(r.nnz_mean) << ',' << detail::csv_field(r.nnz_std) << ','
            << detail::format_double(r.accuracy_mean) << ',' << detail::csv_field(r.accuracy_std)
            << ',' << detail::csv_field(r.objective_error_mean) << ','
            << detail::csv_field(r.l2_distance_mean) << ','
            << detail::csv_field(r.support_consensus_mean) << ','
            << detail::format_double(r.bytes_mean) << '\n';
  }

  SweepOutput out;
  out.rows = std::move(rows);
  out.metrics_csv = args.out_dir / "metrics.csv";
  out.convergence_csv = args.out_dir / "convergence.csv";
  detail::write_file(out.metrics_csv, metrics.str());
  detail::write_file(out.convergence_csv, conv.str());
  if (args.timing) {
    out.timing_csv = args.out_dir / "timing.csv";
    detail::write_file(*out.timing_csv, timing.str());
  }
  return out;
}

}  // namespace proxcsl
