#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedsgc/federation.hpp"

namespace fedsgc {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ExperimentConfig {
  std::string dataset = "synthetic";   // synthetic | mnist | cifar10
  std::string arch = "auto";           // auto | mlp:<h1[,h2,..]> | cnn_mnist | cnn_cifar
  std::string partition = "dirichlet"; // dirichlet | pathological
  int shards_per_client = 2;
  double beta = 0.5;
  int clients = 8;
  int sample = 4;
  int rounds = 20;
  int r_end = -1;  // -1 -> rounds
  int epochs = 1;
  int batch = 32;
  std::string optimizer = "sgd";  // sgd | adam
  double lr = 0.05;
  double mu = 0.0;
  double S = 0.8;
  double alpha = 0.5;
  double lambda = 0.01;
  int delta_r = 5;
  int delta_t = 1;
  std::uint64_t seed = 1;
  std::string data_dir;  // empty -> $FEDSGC_DATA_DIR, then "."
  int mnist_subset = 0;       // 0 = full training set
  int mnist_test_subset = 0;  // 0 = full test set
  int synth_samples = 2000;
  int synth_test_samples = 500;
  int synth_classes = 10;
  int synth_dim = 20;
  double synth_noise = 0.25;
  long long t_end = 0;  // 0 -> E * ceil(R*sample/clients)

  int effective_r_end() const { return r_end < 0 ? rounds : r_end; }
  long long effective_t_end() const;
  void validate() const;  // named range errors
};

// Presets: synthetic_smoke, mnist_subset_trend, mnist_table1 (long-running),
// cifar10_table2 (long-running).
ExperimentConfig make_preset(const std::string& name);
std::vector<std::string> preset_names();

// Flat key=value lines; '#' comments and blank lines ignored.
ExperimentConfig parse_config_file(const std::string& path, ExperimentConfig base);
void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::map<std::string, std::string> config_snapshot(const ExperimentConfig& cfg);

struct MetricsRow {
  int round = 0;  // completed rounds; row 0 is the initial model
  double test_accuracy = 0.0;
  double global_sparsity = 0.0;
  double cumulative_upload_mib = 0.0;
  double cumulative_download_mib = 0.0;
};

struct RunProbes {
  std::function<void(int round, int client_id, double sparsity)> after_client_readjust;
  std::function<void(int round, double global_sparsity)> after_aggregate;
};

struct RunResult {
  std::vector<MetricsRow> rows;
  CommLedger ledger;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::string metrics_path, ledger_path, model_path, config_path;
};

// Executes R rounds, writes metrics.csv, ledger.csv, model.bin and a config
// snapshot under out_dir, prints a best-accuracy-at-capacity summary.
RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         RunProbes* probes = nullptr);

// Degeneration preset: S=0, no re-adjusting, full participation, dense payloads.
RunResult run_fedavg_baseline(ExperimentConfig cfg, const std::string& out_dir);

std::string metrics_csv_header();
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

struct CompareRow {
  double capacity_mib = 0.0;
  double best_a = 0.0;
  double best_b = 0.0;
  bool beyond_a = false;  // checkpoint beyond the run's total upload
  bool beyond_b = false;
};

struct CompareResult {
  std::vector<CompareRow> rows;
};

// Aligns two runs on the cumulative-upload axis and reports best accuracy at
// each capacity checkpoint; checkpoints beyond a run report its last value,
// flagged.
CompareResult compare_runs(const std::string& csv_a, const std::string& csv_b,
                           const std::vector<double>& capacities_mib);
std::string format_compare(const CompareResult& cmp);

}  // namespace fedsgc
