// fedsgc: federated dynamic sparse training simulator.
//
//   fedsgc run --preset synthetic_smoke --out runs/smoke
//   fedsgc run --config exp.cfg --seed 3 --lambda 0 --out runs/ablation
//   fedsgc compare runs/a/metrics.csv runs/b/metrics.csv --at 100 --at 200
//   fedsgc make-data --out data/

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsgc/experiment.hpp"

using namespace fedsgc;

namespace {

struct RunArgs {
  std::string config;
  std::string preset;
  std::string out = "fedsgc_out";
  std::optional<std::string> seed;
  // spec-listed per-key overrides
  std::optional<std::string> S, alpha, lambda, delta_r, delta_t, rounds, epochs, lr, mu,
      clients, sample, optimizer, dataset, beta, shards_per_client;
  // additional keys, same precedence
  std::optional<std::string> batch, arch, r_end, partition, data_dir, mnist_subset,
      mnist_test_subset;
  bool fedavg_baseline = false;
};

void apply_overrides(ExperimentConfig& cfg, const RunArgs& a) {
  auto put = [&](const char* key, const std::optional<std::string>& v) {
    if (v) set_key(cfg, key, *v);
  };
  put("seed", a.seed);
  put("S", a.S);
  put("alpha", a.alpha);
  put("lambda", a.lambda);
  put("delta_r", a.delta_r);
  put("delta_t", a.delta_t);
  put("rounds", a.rounds);
  put("epochs", a.epochs);
  put("lr", a.lr);
  put("mu", a.mu);
  put("clients", a.clients);
  put("sample", a.sample);
  put("optimizer", a.optimizer);
  put("dataset", a.dataset);
  put("beta", a.beta);
  put("shards_per_client", a.shards_per_client);
  put("batch", a.batch);
  put("arch", a.arch);
  put("r_end", a.r_end);
  put("partition", a.partition);
  put("data_dir", a.data_dir);
  put("mnist_subset", a.mnist_subset);
  put("mnist_test_subset", a.mnist_test_subset);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated dynamic sparse training simulator"};
  app.require_subcommand(1);

  // --- run ---------------------------------------------------------------
  RunArgs ra;
  CLI::App* run = app.add_subcommand("run", "run an experiment");
  run->add_option("--config", ra.config, "key=value config file");
  run->add_option("--preset", ra.preset,
                  "preset name (synthetic_smoke, mnist_subset_trend, mnist_table1, "
                  "cifar10_table2)");
  run->add_option("--out", ra.out, "output directory");
  run->add_option("--seed", ra.seed, "root seed");
  run->add_option("--S", ra.S, "target sparsity in [0,1)");
  run->add_option("--alpha", ra.alpha, "over-prune schedule amplitude");
  run->add_option("--lambda", ra.lambda, "guided fraction in [0,1]");
  run->add_option("--delta-r", ra.delta_r, "re-adjust round period");
  run->add_option("--delta-t", ra.delta_t, "re-adjust epoch period");
  run->add_option("--rounds", ra.rounds, "federated rounds");
  run->add_option("--epochs", ra.epochs, "local epochs per round");
  run->add_option("--lr", ra.lr, "local learning rate");
  run->add_option("--mu", ra.mu, "proximal term weight");
  run->add_option("--clients", ra.clients, "total clients");
  run->add_option("--sample", ra.sample, "clients sampled per round");
  run->add_option("--optimizer", ra.optimizer, "sgd | adam");
  run->add_option("--dataset", ra.dataset, "synthetic | mnist | cifar10");
  run->add_option("--beta", ra.beta, "dirichlet concentration");
  run->add_option("--shards-per-client", ra.shards_per_client, "pathological shards");
  run->add_option("--batch", ra.batch, "mini-batch size");
  run->add_option("--arch", ra.arch, "auto | mlp:<h1[,h2..]> | cnn_mnist | cnn_cifar");
  run->add_option("--r-end", ra.r_end, "last round eligible for re-adjusting");
  run->add_option("--partition", ra.partition, "dirichlet | pathological");
  run->add_option("--data-dir", ra.data_dir,
                  "dataset root (default: $FEDSGC_DATA_DIR, then .)");
  run->add_option("--mnist-subset", ra.mnist_subset, "truncate training set");
  run->add_option("--mnist-test-subset", ra.mnist_test_subset, "truncate test set");
  run->add_flag("--fedavg-baseline", ra.fedavg_baseline,
                "force S=0, full participation, no re-adjusting");

  // --- compare -----------------------------------------------------------
  std::string csv_a, csv_b;
  std::vector<double> capacities;
  CLI::App* cmp = app.add_subcommand("compare", "align two runs on upload capacity");
  cmp->add_option("csv_a", csv_a, "metrics.csv of run A")->required();
  cmp->add_option("csv_b", csv_b, "metrics.csv of run B")->required();
  cmp->add_option("--at", capacities, "capacity checkpoint in MiB (repeatable)");

  // --- make-data ---------------------------------------------------------
  std::string data_out = ".";
  int train_n = 60000, test_n = 10000;
  CLI::App* mk = app.add_subcommand(
      "make-data", "write a stand-in IDX dataset (MNIST file names and format)");
  mk->add_option("--out", data_out, "target directory");
  mk->add_option("--train-samples", train_n, "training set size");
  mk->add_option("--test-samples", test_n, "test set size");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentConfig cfg;
      if (!ra.preset.empty()) cfg = make_preset(ra.preset);
      if (!ra.config.empty()) cfg = parse_config_file(ra.config, cfg);
      apply_overrides(cfg, ra);
      cfg.validate();
      RunResult res = ra.fedavg_baseline ? run_fedavg_baseline(cfg, ra.out)
                                         : run_experiment(cfg, ra.out);
      std::cout << "wrote " << res.metrics_path << ", " << res.ledger_path << ", "
                << res.model_path << "\n";
      return 0;
    }
    if (cmp->parsed()) {
      if (capacities.empty()) {
        const auto rows = read_metrics_csv(csv_a);
        const double total = rows.back().cumulative_upload_mib;
        for (int q = 1; q <= 4; ++q) capacities.push_back(total * q / 4.0);
      }
      std::cout << format_compare(compare_runs(csv_a, csv_b, capacities));
      return 0;
    }
    if (mk->parsed()) {
      if (ensure_standin_idx(data_out, train_n, test_n)) {
        std::cout << "wrote IDX files under " << data_out << "\n";
      } else {
        std::cout << "IDX files already present under " << data_out << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
