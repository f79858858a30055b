#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedsgc/experiment.hpp"

using namespace fedsgc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("fedsgc_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_synth() {
  ExperimentConfig c = make_preset("synthetic_smoke");
  c.rounds = 4;
  c.synth_samples = 400;
  c.synth_test_samples = 120;
  c.clients = 4;
  c.sample = 2;
  c.delta_r = 2;
  c.delta_t = 1;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("presets: table-1 values are the mnist defaults") {
  ExperimentConfig c = make_preset("mnist_table1");
  CHECK(c.S == 0.8);
  CHECK(c.alpha == 0.5);
  CHECK(c.delta_r == 20);
  CHECK(c.delta_t == 20);
  CHECK(c.lambda == 0.01);
  CHECK(c.clients == 100);
  CHECK(c.sample == 10);
  CHECK(c.rounds == 400);
  CHECK(c.epochs == 5);
  CHECK(c.batch == 50);
  CHECK(c.lr == 0.001);
  CHECK(c.optimizer == "sgd");
  CHECK_THROWS_AS(make_preset("nope"), ConfigError);
}

TEST_CASE("parse_config_file: empty file keeps the preset; overrides land after") {
  TempDir tmp;
  {
    std::ofstream out(tmp.sub("empty.cfg"));
  }
  ExperimentConfig c = parse_config_file(tmp.sub("empty.cfg"), make_preset("mnist_table1"));
  CHECK(c.S == 0.8);
  CHECK(c.alpha == 0.5);
  CHECK(c.delta_r == 20);
  CHECK(c.delta_t == 20);
  CHECK(c.lambda == 0.01);

  {
    std::ofstream out(tmp.sub("file.cfg"));
    out << "# comment\n";
    out << "lambda = 0.5\n";
    out << "rounds=12\n";
  }
  ExperimentConfig f = parse_config_file(tmp.sub("file.cfg"), make_preset("mnist_table1"));
  CHECK(f.lambda == 0.5);
  CHECK(f.rounds == 12);
  // flag overrides file
  set_key(f, "lambda", "0");
  CHECK(f.lambda == 0.0);
}

TEST_CASE("config validation: named range and key errors") {
  ExperimentConfig c;
  CHECK_THROWS_WITH_AS(set_key(c, "bogus", "1"), doctest::Contains("unknown config key"),
                       ConfigError);
  set_key(c, "S", "1.0");
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("S must be in [0,1)"), ConfigError);
  set_key(c, "S", "0.8");
  set_key(c, "sample", "50");
  set_key(c, "clients", "10");
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("sample"), ConfigError);
  CHECK_THROWS_AS(set_key(c, "rounds", "ten"), ConfigError);
}

TEST_CASE("t_end default follows the expected participation horizon") {
  ExperimentConfig c;
  c.rounds = 60;
  c.sample = 5;
  c.clients = 20;
  c.epochs = 5;
  CHECK(c.effective_t_end() == 75);  // 5 * ceil(60*5/20)
  c.t_end = 40;
  CHECK(c.effective_t_end() == 40);
}

TEST_CASE("run_experiment: deterministic csv outputs, monotone cumulatives") {
  TempDir tmp;
  ExperimentConfig c = tiny_synth();
  RunResult a = run_experiment(c, tmp.sub("a"));
  RunResult b = run_experiment(c, tmp.sub("b"));
  CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
  CHECK(slurp(a.ledger_path) == slurp(b.ledger_path));
  CHECK(slurp(a.model_path) == slurp(b.model_path));
  REQUIRE(a.rows.size() == 5);

  double prev_up = -1, prev_down = -1;
  for (const auto& row : a.rows) {
    CHECK(row.cumulative_upload_mib >= prev_up);
    CHECK(row.cumulative_download_mib >= prev_down);
    prev_up = row.cumulative_upload_mib;
    prev_down = row.cumulative_download_mib;
    CHECK(row.test_accuracy >= 0.0);
    CHECK(row.test_accuracy <= 1.0);
  }

  // a different seed changes the trajectory
  ExperimentConfig c2 = tiny_synth();
  c2.seed = 12;
  RunResult d = run_experiment(c2, tmp.sub("d"));
  CHECK(slurp(a.metrics_path) != slurp(d.metrics_path));
}

TEST_CASE("run_experiment: R=0 emits only the round-0 evaluation") {
  TempDir tmp;
  ExperimentConfig c = tiny_synth();
  c.rounds = 0;
  RunResult r = run_experiment(c, tmp.sub("zero"));
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].round == 0);
  CHECK(r.rows[0].cumulative_upload_mib == 0.0);
  auto parsed = read_metrics_csv(r.metrics_path);
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].round == 0);
}

TEST_CASE("fedavg degeneration: S=0 + no readjust + full participation is bitwise") {
  TempDir tmp;
  ExperimentConfig c = tiny_synth();
  c.S = 0.0;
  c.alpha = 0.0;
  c.sample = c.clients;
  c.delta_r = c.rounds + 1;  // schedule can never fire
  RunResult a = run_experiment(c, tmp.sub("cfg"));

  ExperimentConfig base = tiny_synth();
  base.delta_r = c.delta_r;  // keep the analytic download column aligned
  RunResult b = run_fedavg_baseline(base, tmp.sub("baseline"));
  CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
  CHECK(slurp(a.ledger_path) == slurp(b.ledger_path));
  CHECK(slurp(a.model_path) == slurp(b.model_path));
}

TEST_CASE("metrics csv round-trips and rejects foreign schemas") {
  TempDir tmp;
  ExperimentConfig c = tiny_synth();
  c.rounds = 2;
  RunResult r = run_experiment(c, tmp.sub("run"));
  auto rows = read_metrics_csv(r.metrics_path);
  REQUIRE(rows.size() == r.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].round == r.rows[i].round);
    CHECK(rows[i].test_accuracy == doctest::Approx(r.rows[i].test_accuracy).epsilon(1e-6));
  }
  {
    std::ofstream out(tmp.sub("bad.csv"));
    out << "round,acc\n0,1\n";
  }
  CHECK_THROWS_AS(read_metrics_csv(tmp.sub("bad.csv")), ConfigError);
}

TEST_CASE("compare_runs: zero deltas on identical files, beyond-length flag") {
  TempDir tmp;
  ExperimentConfig c = tiny_synth();
  c.rounds = 3;
  RunResult r = run_experiment(c, tmp.sub("x"));
  const double total = r.rows.back().cumulative_upload_mib;

  CompareResult same = compare_runs(r.metrics_path, r.metrics_path,
                                    {total / 2.0, total, total * 10.0});
  for (const auto& row : same.rows) {
    CHECK(row.best_a == row.best_b);
  }
  CHECK_FALSE(same.rows[1].beyond_a);
  CHECK(same.rows[2].beyond_a);
  CHECK(same.rows[2].beyond_b);
  // beyond the run: reports the run-final best value
  CHECK(same.rows[2].best_a == doctest::Approx(r.best_accuracy));

  // hand computation on a synthetic pair
  {
    std::ofstream out(tmp.sub("ha.csv"));
    out << metrics_csv_header() << "\n";
    out << "0,0.10,0.0,0.0,0.0\n";
    out << "1,0.30,0.0,1.0,1.0\n";
    out << "2,0.20,0.0,2.0,2.0\n";
  }
  {
    std::ofstream out(tmp.sub("hb.csv"));
    out << metrics_csv_header() << "\n";
    out << "0,0.15,0.0,0.0,0.0\n";
    out << "1,0.25,0.0,1.5,1.5\n";
  }
  CompareResult cmp = compare_runs(tmp.sub("ha.csv"), tmp.sub("hb.csv"), {1.0, 2.0});
  CHECK(cmp.rows[0].best_a == doctest::Approx(0.30));
  CHECK(cmp.rows[0].best_b == doctest::Approx(0.15));
  CHECK(cmp.rows[1].best_a == doctest::Approx(0.30));
  CHECK(cmp.rows[1].best_b == doctest::Approx(0.25));
  CHECK(cmp.rows[1].beyond_b);
  CHECK_FALSE(cmp.rows[1].beyond_a);

  const std::string table = format_compare(cmp);
  CHECK(table.find("beyond run length") != std::string::npos);
}

TEST_CASE("run_experiment: conv architecture end to end on idx data") {
  TempDir tmp;
  ensure_standin_idx(tmp.sub("data"), 128, 64);
  ExperimentConfig c;
  c.dataset = "mnist";
  c.data_dir = tmp.sub("data");
  c.arch = "cnn_mnist";
  c.partition = "dirichlet";
  c.beta = 1.0;
  c.clients = 2;
  c.sample = 1;
  c.rounds = 1;
  c.epochs = 1;
  c.batch = 16;
  c.lr = 0.01;
  c.S = 0.5;
  c.delta_r = 1;
  c.delta_t = 1;
  c.r_end = 1;
  c.seed = 9;
  RunResult r = run_experiment(c, tmp.sub("conv"));
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[1].global_sparsity == doctest::Approx(0.5).epsilon(0.01));
  CHECK(r.rows[1].cumulative_upload_mib > 0.0);
}

TEST_CASE("best-accuracy-at-capacity is non-decreasing in capacity") {
  TempDir tmp;
  ExperimentConfig c = tiny_synth();
  RunResult r = run_experiment(c, tmp.sub("mono"));
  const double total = r.rows.back().cumulative_upload_mib;
  std::vector<double> caps;
  for (int i = 1; i <= 8; ++i) caps.push_back(total * i / 8.0);
  CompareResult cmp = compare_runs(r.metrics_path, r.metrics_path, caps);
  double prev = 0.0;
  for (const auto& row : cmp.rows) {
    CHECK(row.best_a >= prev);
    prev = row.best_a;
  }
}
