// Command-line front end for λ sweeps over LIBSVM or synthetic data.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "proxcsl/proxcsl.hpp"

using namespace proxcsl;

namespace {

// Parses "k1=v1,k2=v2" into a map, rejecting unknown keys.
std::map<std::string, std::string> parse_pairs(const std::string& text,
                                               std::initializer_list<const char*> allowed) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArgument("expected key=value, got '" + item + "'");
    const auto key = item.substr(0, eq);
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw InvalidArgument("unknown key '" + key + "'");
    out[key] = item.substr(eq + 1);
  }
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw InvalidArgument("not a number: '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw InvalidArgument("not an integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed sparse logistic regression: one-shot estimators plus surrogate updates"};
  SweepArgs args;
  std::string data_path;
  std::string synthetic;
  std::string elastic_net;
  std::string oracle = "on";
  std::string init = "owa";
  std::string mode = "main";
  auto& spec = args.spec;

  auto* data_opt = app.add_option("--data", data_path, "LIBSVM file")->check(CLI::ExistingFile);
  auto* syn_opt = app.add_option("--synthetic", synthetic,
                                 "Synthetic data: n=..,d=..,s=..[,zero_prob=..][,seed=..]");
  data_opt->excludes(syn_opt);
  app.add_option("--n-features", args.n_features, "Feature dimension (default: inferred)");
  app.add_option("--test-fraction", spec.test_fraction, "Held-out fraction")->check(CLI::Range(0.0, 1.0));
  app.add_option("--partitions,-p", spec.partitions, "Number of partitions")->check(CLI::PositiveNumber);
  app.add_option("--init", init, "Initial estimator")->check(CLI::IsMember({"naive", "owa"}));
  app.add_option("--mode", mode, "Where updates are solved")->check(CLI::IsMember({"main", "all"}));
  app.add_option("--updates,-k", spec.k_updates, "Surrogate updates after the initial estimate");
  app.add_option("--replicates", spec.replicates, "Random partitionings per lambda")->check(CLI::PositiveNumber);
  app.add_option("--seed", spec.seed, "Base seed");
  app.add_option("--threads", args.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--lambda-count", spec.lambda_count, "Grid size")->check(CLI::PositiveNumber);
  app.add_option("--lambda-min-ratio", spec.lambda_min_ratio, "Smallest lambda / lambda_max");
  app.add_option("--elastic-net", elastic_net, "L2 strength: l2=<value> or ratio=<lambda2/lambda1>");
  app.add_option("--out", args.out_dir, "Output directory");
  app.add_option("--cache-dir", args.cache_dir, "Full-data solution cache (default: <out>/oracle_cache)");
  app.add_option("--oracle", oracle, "Compute full-data reference solutions")
      ->check(CLI::IsMember({"on", "off"}));
  app.add_flag("!--no-timing", args.timing, "Skip timing.csv (keeps outputs deterministic)");

  auto& upd = args.update_config;
  app.add_option("--outer", upd.max_outer, "Outer proximal-Newton steps per update");
  app.add_option("--inner", upd.max_inner, "Coordinate-descent passes per outer step");
  app.add_option("--beta", upd.linesearch_beta, "Linesearch shrink factor");
  app.add_option("--kmax", upd.linesearch_kmax, "Linesearch trials");
  app.add_option("--alpha-init", upd.alpha_init, "Initial damping");
  bool fixed_alpha = false;
  app.add_flag("--fixed-alpha", fixed_alpha, "Disable adaptive damping");

  CLI11_PARSE(app, argc, argv);

  try {
    if (data_path.empty() == synthetic.empty()) {
      throw InvalidArgument("give exactly one of --data or --synthetic");
    }
    if (!data_path.empty()) {
      args.data_path = data_path;
    } else {
      const auto kv = parse_pairs(synthetic, {"n", "d", "s", "zero_prob", "seed"});
      SyntheticSpec s;
      if (!kv.contains("n") || !kv.contains("d") || !kv.contains("s")) {
        throw InvalidArgument("--synthetic needs n, d and s");
      }
      s.n_samples = to_size(kv.at("n"));
      s.n_features = to_size(kv.at("d"));
      s.n_true_nonzeros = to_size(kv.at("s"));
      if (kv.contains("zero_prob")) s.zero_prob = to_double(kv.at("zero_prob"));
      s.seed = kv.contains("seed") ? to_size(kv.at("seed")) : spec.seed;
      args.synthetic = s;
    }
    if (!elastic_net.empty()) {
      const auto kv = parse_pairs(elastic_net, {"l2", "ratio"});
      if (kv.size() != 1) throw InvalidArgument("--elastic-net takes one of l2=.. or ratio=..");
      if (kv.contains("l2")) {
        args.lambda2 = to_double(kv.at("l2"));
      } else {
        args.l2_ratio = to_double(kv.at("ratio"));
      }
    }
    args.oracle = oracle == "on";
    spec.init = init == "owa" ? InitMethod::Owa : InitMethod::Naive;
    spec.mode = mode == "main" ? UpdateMode::MainNode : UpdateMode::AllNode;
    upd.adaptive_alpha = !fixed_alpha;
    upd.validate();

    const auto out = run_sweep(args);
    std::printf("%-18s %12s %9s %9s %12s\n", "method", "lambda", "nnz", "accuracy", "obj_err_%");
    for (const auto& r : out.rows) {
      std::printf("%-18s %12.5g %9.1f %9.4f %12s\n", r.method.c_str(), r.lambda, r.nnz_mean,
                  r.accuracy_mean,
                  r.objective_error_mean ? std::to_string(*r.objective_error_mean).c_str() : "-");
    }
    std::printf("wrote %s and %s\n", out.metrics_csv.string().c_str(),
                out.convergence_csv.string().c_str());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
