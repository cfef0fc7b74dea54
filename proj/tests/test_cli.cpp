#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crossrec/cli.hpp"
#include "crossrec/dataio.hpp"
#include "crossrec/model.hpp"
#include "crossrec/traineval.hpp"
#include "doctest.h"

using namespace crossrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("crossrec_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

RunConfig tiny_run_config(const TempDir& dir) {
  RunConfig cfg;
  cfg.synth.num_users = 40;
  cfg.synth.num_domains = 2;
  cfg.synth.items_per_domain = 12;
  cfg.synth.seq_len_min = 10;
  cfg.synth.seq_len_max = 14;
  cfg.model.k = 8;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.model.n_max = 16;
  cfg.model.num_negatives = 4;
  cfg.train.steps = 6;
  cfg.train.batch_size = 4;
  cfg.seed = 5;
  cfg.events_path = dir.file("events.tsv");
  cfg.corpus_path = dir.file("corpus.txt");
  cfg.checkpoint_path = dir.file("model.ckpt");
  cfg.report_path = dir.file("metrics.json");
  cfg.loss_log_path = dir.file("loss.log");
  cfg.bench_report_path = dir.file("bench.tsv");
  cfg.propagate_seed();
  return cfg;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("known keys with comments") {
    RunConfig cfg = parse_config_text("# comment\nk=32\nlr=0.01\nuse_ddsr=false\n");
    CHECK(cfg.model.k == 32);
    CHECK(cfg.train.lr == 0.01);
    CHECK_FALSE(cfg.model.use_ddsr);
  }
  SUBCASE("unknown keys are errors, not warnings") {
    CHECK_THROWS_WITH_AS(parse_config_text("kk=32\n"), doctest::Contains("unknown key"),
                         ConfigError);
  }
  SUBCASE("malformed values name the key") {
    CHECK_THROWS_WITH_AS(parse_config_text("k=banana\n"), doctest::Contains("'k'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("use_tape=2\n"), doctest::Contains("boolean"),
                         ConfigError);
  }
  SUBCASE("lists parse") {
    RunConfig cfg = parse_config_text("ablate_seeds=4,5,6\nbench_sizes=32,64\n");
    CHECK(cfg.ablate_seeds == std::vector<std::uint64_t>{4, 5, 6});
    CHECK(cfg.bench_sizes == std::vector<std::size_t>{32, 64});
  }
  SUBCASE("seed fan-out is hierarchical") {
    RunConfig a = parse_config_text("seed=9\n");
    a.propagate_seed();
    CHECK(a.model.seed != 9);
    CHECK(a.model.seed != a.train.seed);
    RunConfig b = parse_config_text("seed=9\n");
    b.propagate_seed();
    CHECK(a.model.seed == b.model.seed);
  }
}

TEST_CASE("cli override plumbing") {
  TempDir dir;
  std::string config_path = dir.file("run.cfg");
  {
    std::ofstream out(config_path);
    out << "k=16\nsteps=3\n";
  }
  SUBCASE("overrides win over the file") {
    int rc = run_cli({"gen-data", "--config", config_path, "--out", dir.file("e.tsv"),
                      "--num_users=0", "--seq_len_min=10", "--seq_len_max=12"});
    CHECK(rc == kExitOk);
    // num_users=0 produces an empty file with only the header comment
    std::string text = read_file(dir.file("e.tsv"));
    CHECK(text == "# user\titem\tdomain\ttimestamp\n");
  }
  SUBCASE("unknown override is a config error exit") {
    int rc = run_cli({"gen-data", "--bogus_key=3"});
    CHECK(rc == kExitConfig);
  }
  SUBCASE("missing corpus file is a data error exit") {
    int rc = run_cli({"train", "--corpus_path=" + dir.file("missing.txt")});
    CHECK(rc == kExitData);
  }
}

TEST_CASE("diverging training exits with the numeric code") {
  TempDir dir;
  RunConfig cfg = tiny_run_config(dir);
  REQUIRE(cmd_gen_data(cfg) == kExitOk);
  REQUIRE(cmd_preprocess(cfg) == kExitOk);
  int rc = run_cli({"train", "--corpus_path=" + cfg.corpus_path,
                    "--checkpoint_path=" + cfg.checkpoint_path,
                    "--loss_log_path=" + cfg.loss_log_path, "--k=8", "--heads=2", "--layers=1",
                    "--n_max=16", "--lr=1e18", "--clip_norm=0", "--steps=40"});
  CHECK(rc == kExitNumeric);
}

TEST_CASE("gen-data is byte-identical per seed and round-trips") {
  TempDir dir;
  RunConfig cfg = tiny_run_config(dir);
  REQUIRE(cmd_gen_data(cfg) == kExitOk);
  std::string first = read_file(cfg.events_path);
  REQUIRE(cmd_gen_data(cfg) == kExitOk);
  CHECK(read_file(cfg.events_path) == first);

  REQUIRE(cmd_preprocess(cfg) == kExitOk);
  Corpus corpus = read_corpus_file(cfg.corpus_path);
  CHECK(corpus.sequences.size() > 0);
}

TEST_CASE("train, eval and resume through the commands") {
  TempDir dir;
  RunConfig cfg = tiny_run_config(dir);
  REQUIRE(cmd_gen_data(cfg) == kExitOk);
  REQUIRE(cmd_preprocess(cfg) == kExitOk);
  REQUIRE(cmd_train(cfg) == kExitOk);

  SUBCASE("evaluating twice yields identical reports") {
    REQUIRE(cmd_eval(cfg) == kExitOk);
    std::string first = read_file(cfg.report_path);
    REQUIRE(cmd_eval(cfg) == kExitOk);
    CHECK(read_file(cfg.report_path) == first);
    MetricsReport report = metrics_from_json(first);
    report.validate();
  }

  SUBCASE("report validates against the metrics invariants") {
    REQUIRE(cmd_eval(cfg) == kExitOk);
    MetricsReport report = metrics_from_json(read_file(cfg.report_path));
    report.validate();
    CHECK(report.num_users == 40);
  }

  SUBCASE("resume reproduces the next step's loss bit-identically") {
    // Uninterrupted 12-step run.
    RunConfig full = cfg;
    full.train.steps = 12;
    full.checkpoint_path = dir.file("full.ckpt");
    full.loss_log_path = dir.file("full.log");
    REQUIRE(cmd_train(full) == kExitOk);

    // 6 steps (already done by cfg) + 6 resumed steps.
    RunConfig second = cfg;
    second.resume = true;
    second.train.steps = 6;
    second.loss_log_path = dir.file("resume.log");
    REQUIRE(cmd_train(second) == kExitOk);

    std::istringstream full_log(read_file(full.loss_log_path));
    std::istringstream resume_log(read_file(second.loss_log_path));
    std::string line;
    std::vector<std::string> full_losses;
    while (std::getline(full_log, line)) {
      full_losses.push_back(line.substr(line.find('\t') + 1));
    }
    REQUIRE(full_losses.size() == 12);
    std::size_t step = 0;
    while (std::getline(resume_log, line)) {
      CHECK(line.substr(line.find('\t') + 1) == full_losses[6 + step]);
      ++step;
    }
    CHECK(step == 6);
  }

  SUBCASE("checkpoint/catalog mismatch is a descriptive data error") {
    RunConfig other = cfg;
    other.synth.items_per_domain = 20;
    other.events_path = dir.file("other_events.tsv");
    other.corpus_path = dir.file("other_corpus.txt");
    REQUIRE(cmd_gen_data(other) == kExitOk);
    REQUIRE(cmd_preprocess(other) == kExitOk);
    RunConfig bad = cfg;
    bad.corpus_path = other.corpus_path;
    CHECK_THROWS_WITH_AS(cmd_eval(bad), doctest::Contains("does not match"), DataError);
  }
}

TEST_CASE("ablate writes a table that parses back") {
  TempDir dir;
  RunConfig cfg = tiny_run_config(dir);
  cfg.synth.num_users = 16;
  cfg.train.steps = 2;
  cfg.ablate_seeds = {5};
  REQUIRE(cmd_gen_data(cfg) == kExitOk);
  REQUIRE(cmd_preprocess(cfg) == kExitOk);
  REQUIRE(cmd_ablate(cfg) == kExitOk);

  auto rows = matrix_from_json(read_file(cfg.report_path));
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].variant.name == "full");
  CHECK(rows[4].variant.name == "dense-alibi");
  for (const auto& row : rows) {
    CHECK(row.seeds == std::vector<std::uint64_t>{5});
    // one seed: stddev zero everywhere
    for (int k : MetricsReport::hr_cutoffs()) CHECK(row.stddev.hr.at(k) == 0.0);
    CHECK(row.stddev.mrr == 0.0);
  }
}

TEST_CASE("bench writes the tabular report") {
  TempDir dir;
  RunConfig cfg = tiny_run_config(dir);
  cfg.bench_sizes = {16};
  cfg.bench_repeats = 1;
  REQUIRE(cmd_bench(cfg) == kExitOk);
  std::string table = read_file(cfg.bench_report_path);
  CHECK(table.find("dense_pairs") != std::string::npos);
  CHECK(table.find("16\t") == table.find('\n') + 1);
}

TEST_CASE("default config trains 100 steps on the default corpus within budget") {
  TempDir dir;
  RunConfig cfg;  // stock defaults: 500 users, k=64, h=4, L=2, 128 negatives
  cfg.train.steps = 100;
  cfg.events_path = dir.file("events.tsv");
  cfg.corpus_path = dir.file("corpus.txt");
  cfg.checkpoint_path = dir.file("model.ckpt");
  cfg.loss_log_path = dir.file("loss.log");
  cfg.propagate_seed();

  auto start = std::chrono::steady_clock::now();
  REQUIRE(cmd_gen_data(cfg) == kExitOk);
  REQUIRE(cmd_preprocess(cfg) == kExitOk);
  REQUIRE(cmd_train(cfg) == kExitOk);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(secs < 300.0);

  std::istringstream log(read_file(cfg.loss_log_path));
  std::string line;
  std::size_t steps = 0;
  while (std::getline(log, line)) ++steps;
  CHECK(steps == 100);
}

TEST_CASE("untrained model ranks at chance level on a single-domain corpus") {
  // 100-item domain, pessimistic ties are irrelevant for continuous scores:
  // HR@1 should sit near 1% averaged over seeds.
  double total_hr1 = 0.0;
  int seeds = 5;
  for (int s = 1; s <= seeds; ++s) {
    SynthConfig sc;
    sc.num_users = 200;
    sc.num_domains = 1;
    sc.items_per_domain = 100;
    sc.seq_len_min = 10;
    sc.seq_len_max = 12;
    sc.seed = static_cast<std::uint64_t>(s) * 101;
    Corpus corpus = generate_synthetic(sc);
    ModelConfig mc;
    mc.k = 8;
    mc.heads = 2;
    mc.layers = 1;
    mc.n_max = 16;
    mc.seed = static_cast<std::uint64_t>(s);
    Model model = Model::init(mc, corpus.catalog.num_items(), corpus.catalog.num_domains());
    auto split = split_leave_one_out(corpus.sequences);
    MetricsReport report = evaluate(model, corpus.catalog, split, 2);
    total_hr1 += report.hr.at(1);
  }
  double mean_hr1 = total_hr1 / seeds;
  CHECK(mean_hr1 == doctest::Approx(1.0).epsilon(1.0));  // 1% +- 1 pt
}
