// Minimal end-to-end run: synthetic data, 8 partitions, OWA start, two
// surrogate updates, compared against a full-data fit.
#include <cstdio>

#include "proxcsl/proxcsl.hpp"

int main() {
  using namespace proxcsl;
  const auto syn = generate_synthetic({.n_samples = 8000, .n_features = 300, .n_true_nonzeros = 15, .seed = 1});
  const auto [train, test] = split_train_test(syn.data, 0.2, 1);

  ProxCslOptions opts;
  opts.partitions = 8;
  opts.reg = {0.2 * lambda_max(train), 0.0};
  opts.k_updates = 2;
  const auto run = run_proxcsl(train, opts, &test);

  for (const auto& r : run.reports) {
    std::printf("round %zu  objective %.6f  nnz %3zu  test accuracy %.4f  bytes %zu\n", r.iteration,
                r.global_objective, r.nnz, r.test_accuracy, r.bytes_broadcast + r.bytes_collected);
  }
  const auto full = solve_local(train, opts.reg);
  std::printf("full data   objective %.6f  nnz %3zu  test accuracy %.4f\n",
              local_objective(train, full.w, opts.reg), full.w.nnz(), evaluate(full.w, test).accuracy);
}
