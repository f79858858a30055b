#include "fedsgc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fedsgc {

namespace fs = std::filesystem;

namespace {

long long parse_ll(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
  }
  if (pos != value.size()) {
    throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
  }
  if (pos != value.size()) {
    throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

long long ExperimentConfig::effective_t_end() const {
  if (t_end > 0) return t_end;
  const long long per =
      (static_cast<long long>(rounds) * sample + clients - 1) / clients;
  return static_cast<long long>(epochs) * std::max(1ll, per);
}

void ExperimentConfig::validate() const {
  auto range_error = [](const std::string& msg) { throw ConfigError(msg); };
  if (dataset != "synthetic" && dataset != "mnist" && dataset != "cifar10") {
    range_error("dataset must be one of synthetic|mnist|cifar10, got '" + dataset + "'");
  }
  if (partition != "dirichlet" && partition != "pathological") {
    range_error("partition must be dirichlet|pathological, got '" + partition + "'");
  }
  if (optimizer != "sgd" && optimizer != "adam") {
    range_error("optimizer must be sgd|adam, got '" + optimizer + "'");
  }
  if (!(S >= 0.0) || S >= 1.0) range_error("S must be in [0,1)");
  if (alpha < 0.0) range_error("alpha must be >= 0");
  if (lambda < 0.0 || lambda > 1.0) range_error("lambda must be in [0,1]");
  if (delta_r < 1) range_error("delta_r must be >= 1");
  if (delta_t < 1) range_error("delta_t must be >= 1");
  if (rounds < 0) range_error("rounds must be >= 0");
  if (r_end > rounds) range_error("r_end must be <= rounds");
  if (epochs < 0) range_error("epochs must be >= 0");
  if (batch < 1) range_error("batch must be >= 1");
  if (lr <= 0.0) range_error("lr must be > 0");
  if (mu < 0.0) range_error("mu must be >= 0");
  if (clients < 1) range_error("clients must be >= 1");
  if (sample < 1 || sample > clients) range_error("sample must be in [1, clients]");
  if (shards_per_client < 1) range_error("shards_per_client must be >= 1");
  if (!(beta > 0.0)) range_error("beta must be > 0");
  if (synth_classes < 2) range_error("synth_classes must be >= 2");
  if (synth_dim < 1) range_error("synth_dim must be >= 1");
  if (synth_samples < 1 || synth_test_samples < 1) {
    range_error("synth sample counts must be >= 1");
  }
  if (mnist_subset < 0 || mnist_test_subset < 0) {
    range_error("mnist subset sizes must be >= 0");
  }
  if (synth_noise < 0.0) range_error("synth_noise must be >= 0");
}

ExperimentConfig make_preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "synthetic_smoke") {
    c.dataset = "synthetic";
    c.arch = "mlp:32";
    c.partition = "dirichlet";
    c.beta = 0.5;
    c.clients = 8;
    c.sample = 4;
    c.rounds = 20;
    c.epochs = 1;
    c.batch = 32;
    c.optimizer = "sgd";
    c.lr = 0.1;
    c.S = 0.8;
    c.alpha = 0.5;
    c.lambda = 0.1;
    c.delta_r = 5;
    c.delta_t = 2;
    c.synth_samples = 2000;
    c.synth_test_samples = 500;
    c.synth_classes = 10;
    c.synth_dim = 20;
    c.synth_noise = 0.3;
  } else if (name == "mnist_subset_trend") {
    c.dataset = "mnist";
    c.arch = "mlp:64";
    c.partition = "pathological";
    c.shards_per_client = 2;
    c.clients = 20;
    c.sample = 5;
    c.rounds = 60;
    c.epochs = 5;
    c.batch = 50;
    c.optimizer = "sgd";
    c.lr = 0.1;
    c.S = 0.8;
    c.alpha = 0.5;
    c.lambda = 0.01;
    c.delta_r = 10;
    c.delta_t = 10;
    c.mnist_subset = 10000;
    c.mnist_test_subset = 2000;
  } else if (name == "mnist_table1") {
    c.dataset = "mnist";
    c.arch = "cnn_mnist";
    c.partition = "pathological";
    c.shards_per_client = 2;
    c.clients = 100;
    c.sample = 10;
    c.rounds = 400;
    c.epochs = 5;
    c.batch = 50;
    c.optimizer = "sgd";
    c.lr = 0.001;
    c.S = 0.8;
    c.alpha = 0.5;
    c.lambda = 0.01;
    c.delta_r = 20;
    c.delta_t = 20;
  } else if (name == "cifar10_table2") {
    c.dataset = "cifar10";
    c.arch = "cnn_cifar";
    c.partition = "pathological";
    c.shards_per_client = 2;
    c.clients = 100;
    c.sample = 10;
    c.rounds = 400;
    c.epochs = 20;
    c.batch = 50;
    c.optimizer = "adam";
    c.lr = 0.0001;
    c.S = 0.8;
    c.alpha = 0.01;
    c.lambda = 0.01;
    c.delta_r = 20;
    c.delta_t = 10;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"synthetic_smoke", "mnist_subset_trend", "mnist_table1", "cifar10_table2"};
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "dataset") cfg.dataset = value;
  else if (key == "arch") cfg.arch = value;
  else if (key == "partition") cfg.partition = value;
  else if (key == "shards_per_client") cfg.shards_per_client = static_cast<int>(parse_ll(key, value));
  else if (key == "beta") cfg.beta = parse_double(key, value);
  else if (key == "clients") cfg.clients = static_cast<int>(parse_ll(key, value));
  else if (key == "sample") cfg.sample = static_cast<int>(parse_ll(key, value));
  else if (key == "rounds") cfg.rounds = static_cast<int>(parse_ll(key, value));
  else if (key == "r_end") cfg.r_end = static_cast<int>(parse_ll(key, value));
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_ll(key, value));
  else if (key == "batch") cfg.batch = static_cast<int>(parse_ll(key, value));
  else if (key == "optimizer") cfg.optimizer = value;
  else if (key == "lr") cfg.lr = parse_double(key, value);
  else if (key == "mu") cfg.mu = parse_double(key, value);
  else if (key == "S") cfg.S = parse_double(key, value);
  else if (key == "alpha") cfg.alpha = parse_double(key, value);
  else if (key == "lambda") cfg.lambda = parse_double(key, value);
  else if (key == "delta_r") cfg.delta_r = static_cast<int>(parse_ll(key, value));
  else if (key == "delta_t") cfg.delta_t = static_cast<int>(parse_ll(key, value));
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_ll(key, value));
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "mnist_subset") cfg.mnist_subset = static_cast<int>(parse_ll(key, value));
  else if (key == "mnist_test_subset") cfg.mnist_test_subset = static_cast<int>(parse_ll(key, value));
  else if (key == "synth_samples") cfg.synth_samples = static_cast<int>(parse_ll(key, value));
  else if (key == "synth_test_samples") cfg.synth_test_samples = static_cast<int>(parse_ll(key, value));
  else if (key == "synth_classes") cfg.synth_classes = static_cast<int>(parse_ll(key, value));
  else if (key == "synth_dim") cfg.synth_dim = static_cast<int>(parse_ll(key, value));
  else if (key == "synth_noise") cfg.synth_noise = parse_double(key, value);
  else if (key == "t_end") cfg.t_end = parse_ll(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

ExperimentConfig parse_config_file(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << path << ":" << lineno << ": expected key=value";
      throw ConfigError(os.str());
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    set_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

std::map<std::string, std::string> config_snapshot(const ExperimentConfig& c) {
  std::map<std::string, std::string> m;
  m["dataset"] = c.dataset;
  m["arch"] = c.arch;
  m["partition"] = c.partition;
  m["shards_per_client"] = std::to_string(c.shards_per_client);
  m["beta"] = fmt_double(c.beta);
  m["clients"] = std::to_string(c.clients);
  m["sample"] = std::to_string(c.sample);
  m["rounds"] = std::to_string(c.rounds);
  m["r_end"] = std::to_string(c.effective_r_end());
  m["epochs"] = std::to_string(c.epochs);
  m["batch"] = std::to_string(c.batch);
  m["optimizer"] = c.optimizer;
  m["lr"] = fmt_double(c.lr);
  m["mu"] = fmt_double(c.mu);
  m["S"] = fmt_double(c.S);
  m["alpha"] = fmt_double(c.alpha);
  m["lambda"] = fmt_double(c.lambda);
  m["delta_r"] = std::to_string(c.delta_r);
  m["delta_t"] = std::to_string(c.delta_t);
  m["seed"] = std::to_string(c.seed);
  m["data_dir"] = c.data_dir;
  m["mnist_subset"] = std::to_string(c.mnist_subset);
  m["mnist_test_subset"] = std::to_string(c.mnist_test_subset);
  m["synth_samples"] = std::to_string(c.synth_samples);
  m["synth_test_samples"] = std::to_string(c.synth_test_samples);
  m["synth_classes"] = std::to_string(c.synth_classes);
  m["synth_dim"] = std::to_string(c.synth_dim);
  m["synth_noise"] = fmt_double(c.synth_noise);
  m["t_end"] = std::to_string(c.effective_t_end());
  return m;
}

namespace {

std::string resolve_data_dir(const ExperimentConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* env = std::getenv("FEDSGC_DATA_DIR")) return env;
  return ".";
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_datasets(const ExperimentConfig& cfg) {
  LoadedData d;
  if (cfg.dataset == "synthetic") {
    // One draw so train and test share the class geometry; the test rows are
    // the tail of the sample.
    Dataset all = make_synthetic(cfg.synth_samples + cfg.synth_test_samples,
                                 cfg.synth_classes, cfg.synth_dim,
                                 cfg.seed ^ 0xA11CEull, cfg.synth_noise);
    d.train = subset_front(all, cfg.synth_samples);
    d.test = all;
    d.test.num_samples = cfg.synth_test_samples;
    d.test.features.erase(d.test.features.begin(),
                          d.test.features.begin() +
                              static_cast<std::ptrdiff_t>(cfg.synth_samples) * all.dim);
    d.test.labels.erase(d.test.labels.begin(),
                        d.test.labels.begin() + cfg.synth_samples);
    return d;
  }
  const std::string dir = resolve_data_dir(cfg);
  if (cfg.dataset == "mnist") {
    d.train = load_mnist_idx(dir + "/train-images-idx3-ubyte",
                             dir + "/train-labels-idx1-ubyte");
    d.test = load_mnist_idx(dir + "/t10k-images-idx3-ubyte",
                            dir + "/t10k-labels-idx1-ubyte");
    if (cfg.mnist_subset > 0) d.train = subset_front(d.train, cfg.mnist_subset);
    if (cfg.mnist_test_subset > 0) d.test = subset_front(d.test, cfg.mnist_test_subset);
    return d;
  }
  // cifar10
  std::vector<std::string> train_files;
  for (int i = 1; i <= 5; ++i) {
    train_files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  }
  d.train = load_cifar10_bin(train_files);
  d.test = load_cifar10_bin({dir + "/test_batch.bin"});
  return d;
}

NetworkSpec resolve_arch(const ExperimentConfig& cfg, const Dataset& train) {
  std::string arch = cfg.arch;
  if (arch == "auto") {
    arch = cfg.dataset == "cifar10" ? "cnn_cifar"
           : (cfg.dataset == "mnist" ? "mlp:64" : "mlp:32");
  }
  if (arch == "cnn_mnist") {
    return conv2_spec(train.height, train.width, train.channels, 10, 20, 50,
                      train.num_classes);
  }
  if (arch == "cnn_cifar") {
    return conv3_spec(train.height, train.width, train.channels, 32, 64, 64, 1024,
                      train.num_classes);
  }
  if (arch.rfind("mlp:", 0) == 0) {
    std::vector<int> dims{train.dim};
    std::stringstream ss(arch.substr(4));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      dims.push_back(static_cast<int>(parse_ll("arch", tok)));
    }
    if (dims.size() < 2) throw ConfigError("arch 'mlp:' needs at least one hidden size");
    dims.push_back(train.num_classes);
    return mlp_spec(dims);
  }
  throw ConfigError("unknown arch '" + arch + "'");
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics csv: " + path);
  out << metrics_csv_header() << '\n';
  for (const auto& r : rows) {
    out << r.round << ',' << fmt_fixed6(r.test_accuracy) << ','
        << fmt_fixed6(r.global_sparsity) << ',' << fmt_fixed6(r.cumulative_upload_mib)
        << ',' << fmt_fixed6(r.cumulative_download_mib) << '\n';
  }
}

double bits_to_mib(std::uint64_t bits) {
  return static_cast<double>(bits) / 8.0 / 1024.0 / 1024.0;
}

}  // namespace

std::string metrics_csv_header() {
  return "round,test_accuracy,global_sparsity,cumulative_upload_MiB,"
         "cumulative_download_MiB";
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  if (line != metrics_csv_header()) {
    throw ConfigError(path + ": unexpected schema: " + line);
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    if (cols.size() != 5) throw ConfigError(path + ": malformed row: " + line);
    r.round = static_cast<int>(parse_ll("round", cols[0]));
    r.test_accuracy = parse_double("test_accuracy", cols[1]);
    r.global_sparsity = parse_double("global_sparsity", cols[2]);
    r.cumulative_upload_mib = parse_double("cumulative_upload_MiB", cols[3]);
    r.cumulative_download_mib = parse_double("cumulative_download_MiB", cols[4]);
    rows.push_back(r);
  }
  return rows;
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                         RunProbes* probes) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);

  LoadedData data = load_datasets(cfg);
  const NetworkSpec spec = resolve_arch(cfg, data.train);
  auto partitions =
      cfg.partition == "pathological"
          ? partition_pathological(data.train, cfg.clients, cfg.shards_per_client,
                                   cfg.seed)
          : partition_dirichlet(data.train, cfg.clients, cfg.beta, cfg.seed);

  std::vector<long long> sizes;
  sizes.reserve(partitions.size());
  for (const auto& p : partitions) sizes.push_back(static_cast<long long>(p.size()));

  const SparsityPlan plan = erk_allocate(spec.layers, cfg.S);
  Rng init_stream = Rng::stream(cfg.seed, "init");
  Rng topology_stream = Rng::stream(cfg.seed, "topology");
  Rng sampling_stream = Rng::stream(cfg.seed, "sampling");
  ServerState server = ServerState::init(spec, plan, sizes, init_stream, topology_stream);

  std::vector<ClientState> clients;
  clients.reserve(partitions.size());
  for (std::size_t i = 0; i < partitions.size(); ++i) {
    clients.emplace_back(static_cast<int>(i), partitions[i],
                         Rng::stream(cfg.seed, "client-batches", i));
  }

  const long long t_end = cfg.effective_t_end();
  const std::size_t n_weights = spec.weight_count();
  const std::uint64_t analytic_up =
      static_cast<std::uint64_t>(std::llround(analytic_upload_bits(n_weights, cfg.S)));
  const std::uint64_t analytic_down = static_cast<std::uint64_t>(std::llround(
      analytic_download_bits(n_weights, cfg.S, static_cast<double>(cfg.delta_r))));

  RunResult result;
  result.rows.push_back(MetricsRow{0, evaluate(server.model, data.test),
                                   server.model.sparsity(), 0.0, 0.0});
  std::vector<std::pair<int, std::vector<double>>> layer_rows;
  layer_rows.emplace_back(0, server.model.layer_sparsities());

  for (int r = 0; r < cfg.rounds; ++r) {
    const int round_1idx = r + 1;
    const bool readjust = is_readjust_round(round_1idx, cfg.delta_r, cfg.effective_r_end());
    const std::vector<int> sampled = sample_clients(sampling_stream, sizes, cfg.sample);

    const std::vector<std::uint8_t> down_bytes =
        encode(to_payload(server.model, readjust ? &server.dmap : nullptr));
    const std::uint64_t down_bits = 8ull * down_bytes.size();

    std::vector<ClientUpdate> updates;
    updates.reserve(sampled.size());
    for (int c : sampled) {
      result.ledger.add(r, c, false, down_bits, analytic_down);
      LocalConfig lc;
      lc.epochs = cfg.epochs;
      lc.batch = cfg.batch;
      lc.optimizer = cfg.optimizer == "sgd" ? OptKind::sgd : OptKind::adam;
      lc.lr = cfg.lr;
      lc.mu = cfg.mu;
      lc.alpha = cfg.alpha;
      lc.lambda = cfg.lambda;
      lc.delta_T = cfg.delta_t;
      lc.T_end_c = t_end;
      lc.readjust_round = readjust;
      ReadjustProbe probe;
      ReadjustProbe* probe_ptr = nullptr;
      if (probes && probes->after_client_readjust) {
        probe.after_readjust = [&, r](int id, double sp) {
          probes->after_client_readjust(r, id, sp);
        };
        probe_ptr = &probe;
      }
      ClientUpdate u = local_round(clients[static_cast<std::size_t>(c)], data.train,
                                   server.model, server.dmap, plan, lc, probe_ptr);
      result.ledger.add(r, c, true, 8ull * encode(to_payload(u)).size(), analytic_up);
      updates.push_back(std::move(u));
    }

    advance_round(server, updates);
    if (probes && probes->after_aggregate) {
      probes->after_aggregate(r, server.model.sparsity());
    }
    result.rows.push_back(MetricsRow{round_1idx, evaluate(server.model, data.test),
                                     server.model.sparsity(),
                                     bits_to_mib(result.ledger.total_upload_bits()),
                                     bits_to_mib(result.ledger.total_download_bits())});
    layer_rows.emplace_back(round_1idx, server.model.layer_sparsities());
  }

  result.final_accuracy = result.rows.back().test_accuracy;
  for (const auto& row : result.rows) {
    result.best_accuracy = std::max(result.best_accuracy, row.test_accuracy);
  }

  result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  result.ledger_path = (fs::path(out_dir) / "ledger.csv").string();
  result.model_path = (fs::path(out_dir) / "model.bin").string();
  result.config_path = (fs::path(out_dir) / "config.txt").string();
  write_metrics_csv(result.metrics_path, result.rows);
  result.ledger.write_csv(result.ledger_path);
  {
    const std::vector<std::uint8_t> bytes = encode(to_payload(server.model));
    std::ofstream out(result.model_path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  {
    std::ofstream out(result.config_path);
    for (const auto& [k, v] : config_snapshot(cfg)) out << k << '=' << v << '\n';
  }
  {
    // per-layer sparsity histogram per round, long form
    std::ofstream out((fs::path(out_dir) / "layer_sparsity.csv").string());
    out << "round,layer,sparsity\n";
    for (const auto& [round, sp] : layer_rows) {
      for (std::size_t l = 0; l < sp.size(); ++l) {
        out << round << ',' << l << ',' << fmt_fixed6(sp[l]) << '\n';
      }
    }
  }

  const auto t1 = std::chrono::steady_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();

  // best-accuracy-at-capacity summary over four evenly spaced checkpoints
  const double total_up = result.rows.back().cumulative_upload_mib;
  std::cout << "run: " << cfg.rounds << " rounds, final accuracy "
            << fmt_fixed6(result.final_accuracy) << ", sparsity "
            << fmt_fixed6(result.rows.back().global_sparsity) << ", wall " << ms
            << " ms\n";
  {
    const FlopReport fr = flop_report(spec, plan);
    std::cout << "compute per training step (MACs/sample): dense " << fr.train_step_dense
              << ", sparse " << fr.train_step_sparse
              << " (re-adjust passes run dense)\n";
  }
  if (total_up > 0.0) {
    std::cout << "best accuracy at cumulative upload capacity:\n";
    for (int q = 1; q <= 4; ++q) {
      const double cap = total_up * q / 4.0;
      double best = 0.0;
      for (const auto& row : result.rows) {
        if (row.cumulative_upload_mib <= cap + 1e-12) {
          best = std::max(best, row.test_accuracy);
        }
      }
      std::cout << "  <= " << fmt_fixed6(cap) << " MiB: " << fmt_fixed6(best) << '\n';
    }
  }
  return result;
}

RunResult run_fedavg_baseline(ExperimentConfig cfg, const std::string& out_dir) {
  cfg.S = 0.0;
  cfg.alpha = 0.0;
  cfg.r_end = 0;  // never re-adjusts
  cfg.sample = cfg.clients;
  return run_experiment(cfg, out_dir);
}

CompareResult compare_runs(const std::string& csv_a, const std::string& csv_b,
                           const std::vector<double>& capacities_mib) {
  const auto a = read_metrics_csv(csv_a);
  const auto b = read_metrics_csv(csv_b);
  if (a.empty() || b.empty()) throw ConfigError("compare_runs: empty metrics");
  CompareResult out;
  for (double cap : capacities_mib) {
    CompareRow row;
    row.capacity_mib = cap;
    auto best_at = [&](const std::vector<MetricsRow>& rows, bool& beyond) {
      beyond = cap > rows.back().cumulative_upload_mib + 1e-12;
      double best = 0.0;
      for (const auto& r : rows) {
        if (beyond || r.cumulative_upload_mib <= cap + 1e-12) {
          best = std::max(best, r.test_accuracy);
        }
      }
      return best;
    };
    row.best_a = best_at(a, row.beyond_a);
    row.best_b = best_at(b, row.beyond_b);
    out.rows.push_back(row);
  }
  return out;
}

std::string format_compare(const CompareResult& cmp) {
  std::ostringstream os;
  os << "capacity_MiB,best_accuracy_a,best_accuracy_b,delta,notes\n";
  for (const auto& r : cmp.rows) {
    os << fmt_fixed6(r.capacity_mib) << ',' << fmt_fixed6(r.best_a) << ','
       << fmt_fixed6(r.best_b) << ',' << fmt_fixed6(r.best_a - r.best_b) << ',';
    if (r.beyond_a || r.beyond_b) {
      os << "beyond run length:";
      if (r.beyond_a) os << " a";
      if (r.beyond_b) os << " b";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace fedsgc
