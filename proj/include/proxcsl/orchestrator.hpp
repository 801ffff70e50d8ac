#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "proxcsl/data.hpp"
#include "proxcsl/error.hpp"
#include "proxcsl/merge.hpp"
#include "proxcsl/objective.hpp"
#include "proxcsl/prox_solver.hpp"
#include "proxcsl/weights.hpp"

namespace proxcsl {

enum class MessageKind {
  BroadcastWeights,    // main -> all, current iterate
  BroadcastGradient,   // main -> all, global gradient (all-node mode)
  LocalSolution,       // worker -> main, one-shot local fit
  LocalGradient,       // worker -> main
  UpdatedWeights,      // all-node mode: worker -> main result, main -> all average
};

inline const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::BroadcastWeights: return "broadcast_weights";
    case MessageKind::BroadcastGradient: return "broadcast_gradient";
    case MessageKind::LocalSolution: return "local_solution";
    case MessageKind::LocalGradient: return "local_gradient";
    case MessageKind::UpdatedWeights: return "updated_weights";
  }
  return "unknown";
}

inline constexpr std::size_t kMainNode = std::numeric_limits<std::size_t>::max();
inline constexpr std::size_t kAllWorkers = kMainNode - 1;
inline constexpr std::size_t kBytesPerValue = 8;
inline constexpr std::size_t kBytesPerIndex = 8;

using Payload = std::variant<std::vector<double>, SparseWeights>;

/// A vector crossing the worker boundary. Raw samples never travel.
struct Message {
  MessageKind kind;
  std::size_t from;
  std::size_t to;
  Payload payload;

  std::size_t value_count() const {
    return std::visit(
        [](const auto& p) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(p)>, SparseWeights>) {
            return p.values.size();
          } else {
            return p.size();
          }
        },
        payload);
  }

  std::size_t index_count() const {
    const auto* s = std::get_if<SparseWeights>(&payload);
    return s ? s->indices.size() : 0;
  }

  std::size_t byte_size() const {
    return kBytesPerValue * value_count() + kBytesPerIndex * index_count();
  }

  bool is_broadcast() const noexcept { return to == kAllWorkers; }
};

/// Metadata of one transmitted message.
struct MessageRecord {
  std::size_t round;
  MessageKind kind;
  std::size_t from;
  std::size_t to;
  std::size_t values;
  std::size_t indices;
  std::size_t bytes;
};

struct PhaseTimings {
  double initial_estimator = 0.0;
  double broadcast_w = 0.0;
  double collect_grads = 0.0;
  double compute_global_grad = 0.0;
  double csl_update = 0.0;
  double single_outer_step = 0.0;
};

struct RoundReport {
  std::size_t iteration = 0;
  double global_objective = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::size_t nnz = 0;
  std::size_t bytes_broadcast = 0;
  std::size_t bytes_collected = 0;
  PhaseTimings timings;
  double alpha = 0.0;
  std::size_t alpha_escalations = 0;
  bool abandoned = false;
  std::size_t outer_steps = 0;
};

/// One partition's compute node. Reads only its own partition.
class Worker {
 public:
  Worker(std::size_t id, const LabeledDataset& data) : id_(id), data_(&data) {}

  std::size_t id() const noexcept { return id_; }
  const LabeledDataset& data() const noexcept { return *data_; }
  std::size_t n_samples() const noexcept { return data_->n_rows(); }

  std::deque<Message> inbox;
  std::deque<Message> outbox;

 private:
  std::size_t id_;
  const LabeledDataset* data_;
};

/// In-process transport with byte accounting. Broadcasts are logged once.
class Network {
 public:
  void set_round(std::size_t r) noexcept { round_ = r; }
  std::size_t round() const noexcept { return round_; }

  void broadcast(Message m, std::vector<Worker>& workers) {
    m.from = kMainNode;
    m.to = kAllWorkers;
    record(m);
    for (auto& w : workers) w.inbox.push_back(m);
  }

  /// Moves every worker's outbox to the main inbox, in worker order.
  void collect(std::vector<Worker>& workers) {
    for (auto& w : workers) {
      while (!w.outbox.empty()) {
        auto m = std::move(w.outbox.front());
        w.outbox.pop_front();
        m.from = w.id();
        m.to = kMainNode;
        record(m);
        main_inbox.push_back(std::move(m));
      }
    }
  }

  const std::vector<MessageRecord>& log() const noexcept { return log_; }

  std::size_t bytes(std::size_t round, bool broadcast) const {
    std::size_t total = 0;
    for (const auto& r : log_) {
      if (r.round == round && (r.to == kAllWorkers) == broadcast) total += r.bytes;
    }
    return total;
  }

  std::deque<Message> main_inbox;

 private:
  void record(const Message& m) {
    log_.push_back({round_, m.kind, m.from, m.to, m.value_count(), m.index_count(), m.byte_size()});
  }

  std::size_t round_ = 0;
  std::vector<MessageRecord> log_;
};

/// Error raised inside a worker, tagged with its partition.
class WorkerError : public Error {
 public:
  WorkerError(std::size_t partition, const std::string& what)
      : Error("partition " + std::to_string(partition) + ": " + what), partition_(partition) {}
  std::size_t partition() const noexcept { return partition_; }

 private:
  std::size_t partition_;
};

namespace detail {

/// Runs fn(k) for k in [0, count) on up to `threads` threads. The first
/// failure (lowest k) is rethrown as a WorkerError.
inline void parallel_for(std::size_t count, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  auto guarded = [&](std::size_t k) {
    try {
      fn(k);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) guarded(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (auto k = next++; k < count; k = next++) guarded(k);
      });
    }
  }
  for (std::size_t k = 0; k < count; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const WorkerError&) {
      throw;
    } catch (const std::exception& e) {
      throw WorkerError(k, e.what());
    }
  }
}

template <class T>
T take_payload(Message& m) {
  auto* p = std::get_if<T>(&m.payload);
  if (!p) throw Error(std::string("unexpected payload shape for ") + to_string(m.kind));
  return std::move(*p);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Partitions plus their workers and the transport between them. Partition 0
/// lives on the main node.
class Cluster {
 public:
  /// `parts` must outlive the cluster.
  explicit Cluster(const PartitionSet& parts, std::size_t threads = 1)
      : parts_(&parts), threads_(threads) {
    if (parts.size() == 0) throw InvalidArgument("cluster needs at least one partition");
    const auto d = parts.partitions.front().n_features();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (parts.partitions[k].n_features() != d) {
        throw InvalidArgument("partitions disagree on feature dimension");
      }
      if (parts.partitions[k].n_rows() == 0) throw InvalidArgument("empty partition");
      workers_.emplace_back(k, parts.partitions[k]);
      total_rows_ += parts.partitions[k].n_rows();
    }
  }

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  std::size_t size() const noexcept { return workers_.size(); }
  std::size_t n_features() const { return parts_->partitions.front().n_features(); }
  std::size_t total_rows() const noexcept { return total_rows_; }
  std::size_t threads() const noexcept { return threads_; }
  std::vector<Worker>& workers() noexcept { return workers_; }
  const PartitionSet& partitions() const noexcept { return *parts_; }
  Network& network() noexcept { return net_; }
  const Network& network() const noexcept { return net_; }

 private:
  const PartitionSet* parts_;
  std::size_t threads_;
  std::vector<Worker> workers_;
  Network net_;
  std::size_t total_rows_ = 0;
};

/// Global objective as the sample-weighted sum of partition losses plus penalty.
/// Monitoring only; not part of the communication protocol.
inline double global_objective(const PartitionSet& parts, const WeightVector& w,
                               const Regularization& reg) {
  double loss = 0.0;
  std::size_t total = 0;
  for (const auto& p : parts.partitions) {
    loss += smooth_loss(p, w) * static_cast<double>(p.n_rows());
    total += p.n_rows();
  }
  return loss / static_cast<double>(total) + detail::penalty(w, reg);
}

/// Every worker fits its own partition; sparse solutions are collected on
/// the main node in partition order.
inline LocalSolutionMatrix run_local_fits(Cluster& cluster, const Regularization& reg,
                                          const SolverConfig& config) {
  auto& workers = cluster.workers();
  detail::parallel_for(workers.size(), cluster.threads(), [&](std::size_t k) {
    auto res = solve_local(workers[k].data(), reg, config);
    workers[k].outbox.push_back(
        {MessageKind::LocalSolution, k, kMainNode, SparseWeights::from_dense(res.w)});
  });
  auto& net = cluster.network();
  net.collect(workers);
  LocalSolutionMatrix W(cluster.n_features());
  while (!net.main_inbox.empty()) {
    auto m = std::move(net.main_inbox.front());
    net.main_inbox.pop_front();
    W.add_column(detail::take_payload<SparseWeights>(m));
  }
  return W;
}

struct GradientRound {
  GradientSnapshot global;
  std::vector<GradientSnapshot> local;
  PhaseTimings timings;
};

/**
 * Broadcasts w, collects every worker's dense local gradient and averages
 * them weighted by partition size, which equals the full-data gradient.
 */
inline GradientRound global_gradient_round_detailed(Cluster& cluster, const WeightVector& w) {
  if (w.size() != cluster.n_features()) throw InvalidArgument("gradient round: dimension mismatch");
  if (!w.all_finite()) throw InvalidArgument("gradient round: non-finite weights");
  auto& workers = cluster.workers();
  auto& net = cluster.network();
  GradientRound out;

  auto t0 = std::chrono::steady_clock::now();
  net.broadcast({MessageKind::BroadcastWeights, kMainNode, kAllWorkers, w.values()}, workers);
  out.timings.broadcast_w = detail::seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  detail::parallel_for(workers.size(), cluster.threads(), [&](std::size_t k) {
    auto& wk = workers[k];
    auto m = std::move(wk.inbox.front());
    wk.inbox.pop_front();
    WeightVector at(detail::take_payload<std::vector<double>>(m));
    auto g = local_gradient(wk.data(), at);
    wk.outbox.push_back({MessageKind::LocalGradient, k, kMainNode, std::move(g.g)});
  });
  net.collect(workers);
  out.timings.collect_grads = detail::seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const auto d = w.size();
  out.global = {std::vector<double>(d, 0.0), w};
  const double inv_total = 1.0 / static_cast<double>(cluster.total_rows());
  while (!net.main_inbox.empty()) {
    auto m = std::move(net.main_inbox.front());
    net.main_inbox.pop_front();
    const auto k = m.from;
    auto g = detail::take_payload<std::vector<double>>(m);
    if (g.size() != d) throw WorkerError(k, "gradient dimension mismatch");
    const double weight = static_cast<double>(workers[k].n_samples()) * inv_total;
    for (std::size_t j = 0; j < d; ++j) out.global.g[j] += weight * g[j];
    out.local.push_back({std::move(g), w});
  }
  out.timings.compute_global_grad = detail::seconds_since(t0);
  return out;
}

/// Full-data smooth-loss gradient at w assembled from the workers.
inline GradientSnapshot global_gradient_round(Cluster& cluster, const WeightVector& w) {
  return global_gradient_round_detailed(cluster, w).global;
}

enum class InitMethod { Naive, Owa };
enum class UpdateMode { MainNode, AllNode };

struct ProxCslOptions {
  std::size_t partitions = 1;
  Regularization reg;
  SolverConfig local_config = SolverConfig::local_fit();
  SolverConfig update_config;
  InitMethod init = InitMethod::Owa;
  std::size_t k_updates = 2;
  UpdateMode mode = UpdateMode::MainNode;
  std::uint64_t seed = 0;
  OwaConfig owa;
  std::size_t threads = 1;
  // Collect gradients at w = 0 first; if zero already satisfies the global
  // optimality condition, every estimate is the zero model.
  bool screen_zero = true;
};

struct ProxCslRun {
  std::vector<RoundReport> reports;
  std::vector<WeightVector> iterates;  // iterate after round t (t = 0 is the one-shot estimate)
  WeightVector naive;
  std::optional<OwaResult> owa;
  std::vector<MessageRecord> messages;
  bool screened_zero = false;
};

namespace detail {

inline double accuracy_of(const LabeledDataset& test, const WeightVector& w) {
  const auto m = margins(test, w);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::uint8_t pred = m[i] > 0.0 ? 1 : 0;
    correct += pred == test.y()[i];
  }
  return m.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(m.size());
}

}  // namespace detail

/**
 * Local fits, one-shot merge, then k_updates rounds of
 * gradient collection and surrogate updates.
 *
 * Main-node mode solves the update on partition 0 only. All-node mode
 * broadcasts the global gradient, solves on every partition and averages
 * the p results uniformly.
 */
inline ProxCslRun run_proxcsl(const PartitionSet& parts, const ProxCslOptions& opts,
                              const LabeledDataset* test = nullptr) {
  opts.reg.validate();
  opts.update_config.validate();
  opts.local_config.validate();
  Cluster cluster(parts, opts.threads);
  auto& net = cluster.network();
  auto& workers = cluster.workers();
  const auto d = cluster.n_features();
  const auto& reg = opts.reg;
  ProxCslRun run;

  auto report_for = [&](std::size_t t, const WeightVector& w) {
    RoundReport r;
    r.iteration = t;
    r.global_objective = global_objective(cluster.partitions(), w, reg);
    if (test) r.test_accuracy = detail::accuracy_of(*test, w);
    r.nnz = w.nnz();
    r.bytes_broadcast = net.bytes(t, true);
    r.bytes_collected = net.bytes(t, false);
    return r;
  };

  net.set_round(0);
  const auto t_init = std::chrono::steady_clock::now();
  if (opts.screen_zero) {
    const auto g0 = global_gradient_round(cluster, WeightVector(d));
    double gmax = 0.0;
    for (const double g : g0.g) gmax = std::max(gmax, std::abs(g));
    // The partition-weighted average can differ from a single-pass full-data
    // gradient in the last bits; don't let that decide lambda = lambda_max.
    if (gmax <= reg.lambda1 * (1.0 + 1e-12)) {
      run.screened_zero = true;
      run.naive = WeightVector(d);
      for (std::size_t t = 0; t <= opts.k_updates; ++t) {
        run.iterates.emplace_back(d);
        auto r = report_for(t, run.iterates.back());
        if (t == 0) r.timings.initial_estimator = detail::seconds_since(t_init);
        run.reports.push_back(r);
      }
      run.messages = net.log();
      return run;
    }
  }

  const auto W = run_local_fits(cluster, reg, opts.local_config);
  run.naive = naive_average(W);
  WeightVector w;
  if (opts.init == InitMethod::Owa) {
    run.owa = owa_merge(W, workers.front().data(), opts.owa);
    w = run.owa->w;
  } else {
    w = run.naive;
  }
  {
    auto r = report_for(0, w);
    r.timings.initial_estimator = detail::seconds_since(t_init);
    run.reports.push_back(r);
    run.iterates.push_back(w);
  }

  for (std::size_t t = 1; t <= opts.k_updates; ++t) {
    net.set_round(t);
    auto round = global_gradient_round_detailed(cluster, w);
    PhaseTimings timings = round.timings;
    const auto t_update = std::chrono::steady_clock::now();
    double alpha = 0.0;
    std::size_t escalations = 0;
    std::size_t outer_steps = 0;
    bool abandoned = false;
    std::vector<double> outer_seconds;

    if (opts.mode == UpdateMode::MainNode) {
      auto res = csl_update(workers.front().data(), w, round.global, opts.update_config, reg,
                            &round.local.front());
      alpha = res.final_alpha;
      escalations = res.alpha_escalations;
      abandoned = res.abandoned;
      outer_steps = res.outer_steps_used;
      outer_seconds = res.outer_step_seconds;
      w = std::move(res.w);
    } else {
      net.broadcast({MessageKind::BroadcastGradient, kMainNode, kAllWorkers, round.global.g},
                    workers);
      std::vector<SolveResult> results(workers.size());
      detail::parallel_for(workers.size(), cluster.threads(), [&](std::size_t k) {
        auto& wk = workers[k];
        auto m = std::move(wk.inbox.front());
        wk.inbox.pop_front();
        const GradientSnapshot global{detail::take_payload<std::vector<double>>(m), w};
        results[k] = csl_update(wk.data(), w, global, opts.update_config, reg, &round.local[k]);
        wk.outbox.push_back({MessageKind::UpdatedWeights, k, kMainNode,
                             SparseWeights::from_dense(results[k].w)});
      });
      net.collect(workers);
      WeightVector avg(d);
      const double inv_p = 1.0 / static_cast<double>(workers.size());
      while (!net.main_inbox.empty()) {
        auto m = std::move(net.main_inbox.front());
        net.main_inbox.pop_front();
        const auto s = detail::take_payload<SparseWeights>(m);
        for (std::size_t e = 0; e < s.nnz(); ++e) avg[s.indices[e]] += inv_p * s.values[e];
      }
      for (const auto& res : results) {
        alpha = std::max(alpha, res.final_alpha);
        escalations += res.alpha_escalations;
        abandoned = abandoned || res.abandoned;
        outer_steps += res.outer_steps_used;
        outer_seconds.insert(outer_seconds.end(), res.outer_step_seconds.begin(),
                             res.outer_step_seconds.end());
      }
      net.broadcast({MessageKind::UpdatedWeights, kMainNode, kAllWorkers,
                     SparseWeights::from_dense(avg)},
                    workers);
      for (auto& wk : workers) wk.inbox.clear();
      w = std::move(avg);
    }
    timings.csl_update = detail::seconds_since(t_update);
    if (!outer_seconds.empty()) {
      double s = 0.0;
      for (const double x : outer_seconds) s += x;
      timings.single_outer_step = s / static_cast<double>(outer_seconds.size());
    }
    auto r = report_for(t, w);
    r.timings = timings;
    r.alpha = alpha;
    r.alpha_escalations = escalations;
    r.abandoned = abandoned;
    r.outer_steps = outer_steps;
    run.reports.push_back(r);
    run.iterates.push_back(w);
  }
  run.messages = net.log();
  return run;
}

/// Partitions `train` with opts.seed and runs the pipeline.
inline ProxCslRun run_proxcsl(const LabeledDataset& train, const ProxCslOptions& opts,
                              const LabeledDataset* test = nullptr) {
  const auto parts = partition(train, opts.partitions, opts.seed);
  return run_proxcsl(parts, opts, test);
}

}  // namespace proxcsl
