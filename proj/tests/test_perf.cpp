#include <algorithm>
#include <cmath>
#include <sstream>

#include "crossrec/perf.hpp"
#include "crossrec/rng.hpp"
#include "crossrec/synthetic.hpp"
#include "doctest.h"

using namespace crossrec;

TEST_CASE("count_attention_pairs closed forms") {
  SUBCASE("equal quarters give the 1/D quadratic ratio") {
    std::vector<std::int64_t> domains;
    for (int d = 0; d < 4; ++d) domains.insert(domains.end(), 25, d);
    auto report = count_attention_pairs(domains);
    CHECK(report.total == 100);
    CHECK(report.intra_causal_pairs == 4 * 25 * 26 / 2);  // 1300
    CHECK(report.dense_causal_pairs == 100 * 101 / 2);    // 5050
    CHECK(report.sum_squares == 2500);
    CHECK(report.quad_ratio == 0.25);  // exactly 1/D
    CHECK(report.delta == 0.25);
  }
  SUBCASE("single domain: intra equals dense") {
    std::vector<std::int64_t> domains(17, 0);
    auto report = count_attention_pairs(domains);
    CHECK(report.intra_causal_pairs == report.dense_causal_pairs);
    CHECK(report.ratio == 1.0);
  }
  SUBCASE("direct summation for (50, 30, 20)") {
    std::vector<std::int64_t> domains;
    domains.insert(domains.end(), 50, 0);
    domains.insert(domains.end(), 30, 1);
    domains.insert(domains.end(), 20, 2);
    auto report = count_attention_pairs(domains);
    CHECK(report.sum_squares == 2500 + 900 + 400);  // 3800
    CHECK(report.delta == 0.5);
    CHECK(static_cast<double>(report.sum_squares) <=
          report.delta * 100.0 * 100.0);  // 3800 <= 5000
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS_AS(count_attention_pairs({}), DataError);
  }
}

TEST_CASE("delta bound with causal slack on random sequences") {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t total = 1 + static_cast<std::size_t>(rng.bounded(512));
    std::size_t num_domains = 1 + static_cast<std::size_t>(rng.bounded(8));
    std::vector<std::int64_t> domains(total);
    for (auto& d : domains) d = static_cast<std::int64_t>(rng.bounded(num_domains));
    auto report = count_attention_pairs(domains);
    double s = static_cast<double>(total);
    double bound = report.delta * s * (s + 1.0) / 2.0 + s;
    REQUIRE(static_cast<double>(report.intra_causal_pairs) <= bound);
    REQUIRE(report.intra_causal_pairs <= report.dense_causal_pairs);
  }
}

namespace {

// All compositions of `total` into `parts` non-negative addends.
void compositions(std::size_t total, std::size_t parts, std::vector<std::size_t>& current,
                  const std::function<void(const std::vector<std::size_t>&)>& visit) {
  if (parts == 1) {
    current.push_back(total);
    visit(current);
    current.pop_back();
    return;
  }
  for (std::size_t first = 0; first <= total; ++first) {
    current.push_back(first);
    compositions(total - first, parts - 1, current, visit);
    current.pop_back();
  }
}

std::uint64_t intra_cost(const std::vector<std::size_t>& sizes) {
  std::uint64_t cost = 0;
  for (std::size_t s : sizes) cost += static_cast<std::uint64_t>(s) * (s + 1) / 2;
  return cost;
}

}  // namespace

TEST_CASE("equal partition minimizes the intra cost (exhaustive)") {
  for (std::size_t total = 1; total <= 20; ++total) {
    for (std::size_t parts = 1; parts <= 4; ++parts) {
      // balanced split: floor/ceil mix
      std::vector<std::size_t> balanced(parts, total / parts);
      for (std::size_t i = 0; i < total % parts; ++i) ++balanced[i];
      std::uint64_t balanced_cost = intra_cost(balanced);

      std::uint64_t best = ~std::uint64_t{0};
      std::vector<std::size_t> current;
      compositions(total, parts, current, [&](const std::vector<std::size_t>& sizes) {
        best = std::min(best, intra_cost(sizes));
      });
      REQUIRE(best == balanced_cost);
    }
  }
}

TEST_CASE("instrumented forward matches the closed-form counts") {
  SynthConfig sc;
  sc.num_users = 10;
  sc.num_domains = 3;
  sc.items_per_domain = 6;
  sc.seq_len_min = 4;
  sc.seq_len_max = 12;
  sc.seed = 31;
  Corpus corpus = generate_synthetic(sc);
  ModelConfig cfg;
  cfg.k = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.n_max = 16;
  cfg.seed = 3;

  SUBCASE("intra-masked counts, single hand-checked case") {
    // domains (1,1,2,1): within-domain causal pairs = (1+2+3) + 1 = 7
    ModelConfig one = cfg;
    one.heads = 1;
    one.layers = 1;
    Model model = Model::init(one, corpus.catalog.num_items(), corpus.catalog.num_domains());
    UserSequence seq;
    seq.items = {6, 7, 12, 8};  // domains 1,1,2,1 under items_per_domain=6
    seq.domains = {1, 1, 2, 1};
    auto result = instrumented_forward(model, seq, 1);
    CHECK(result.intra_score_ops == 7);
  }

  SUBCASE("dense baseline counts the causal triangle") {
    ModelConfig dense = cfg;
    dense.intra_domain_mask = false;
    Model model = Model::init(dense, corpus.catalog.num_items(), corpus.catalog.num_domains());
    const UserSequence& seq = corpus.sequences[0];
    auto result = instrumented_forward(model, seq, 0);
    std::uint64_t n = seq.size();
    CHECK(result.intra_score_ops == n * (n + 1) / 2 * dense.heads * dense.layers);
  }

  SUBCASE("doubling layers doubles the count") {
    Model m1 = Model::init(cfg, corpus.catalog.num_items(), corpus.catalog.num_domains());
    ModelConfig cfg2 = cfg;
    cfg2.layers = 4;
    Model m2 = Model::init(cfg2, corpus.catalog.num_items(), corpus.catalog.num_domains());
    const UserSequence& seq = corpus.sequences[1];
    auto r1 = instrumented_forward(m1, seq, 0);
    auto r2 = instrumented_forward(m2, seq, 0);
    CHECK(r2.intra_score_ops == 2 * r1.intra_score_ops);
    CHECK(r2.ddsr_score_ops == 2 * r1.ddsr_score_ops);
  }

  SUBCASE("random sequences agree exactly and DDSR cost is linear in |D|") {
    Model model = Model::init(cfg, corpus.catalog.num_items(), corpus.catalog.num_domains());
    for (const auto& seq : corpus.sequences) {
      auto result = instrumented_forward(model, seq, seq.domains.back());
      auto expected = count_attention_pairs(seq.domains, corpus.catalog.num_domains());
      CHECK(result.intra_score_ops ==
            expected.intra_causal_pairs * cfg.heads * cfg.layers);
      CHECK(result.ddsr_score_ops == expected.ddsr_pairs * cfg.layers);
      CHECK(expected.ddsr_pairs ==
            corpus.catalog.num_domains() * expected.dense_causal_pairs);
    }
  }
}

TEST_CASE("bench emits one row per size with exact counts") {
  BenchConfig cfg;
  cfg.sizes = {16, 32};
  cfg.repeats = 1;
  cfg.k = 8;
  cfg.heads = 2;
  cfg.num_domains = 4;
  auto rows = bench(cfg);
  REQUIRE(rows.size() == 2);
  for (const auto& row : rows) {
    auto domains = make_domain_sequence(row.total, cfg.num_domains, cfg.distribution, 0);
    // counts must match count_attention_pairs for the same layout rule
    auto expected = count_attention_pairs(
        make_domain_sequence(row.total, cfg.num_domains, cfg.distribution, 12345));
    // layout differs by seed but sizes are deterministic, so pair counts match
    CHECK(row.intra_pairs == expected.intra_causal_pairs);
    CHECK(row.dense_pairs == expected.dense_causal_pairs);
    CHECK(row.median_ms_dense >= 0.0);
    CHECK(row.median_ms_intra >= 0.0);
    (void)domains;
  }
  std::string table = format_bench_table(rows);
  CHECK(table.find("median_ms_dense") != std::string::npos);
  // one header plus one line per row
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
}

TEST_CASE("skewed distributions and largest-remainder apportionment") {
  auto domains = make_domain_sequence(10, 3, "0.5,0.3,0.2", 1);
  auto report = count_attention_pairs(domains, 3);
  std::vector<std::size_t> sizes = report.domain_sizes;
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<std::size_t>{2, 3, 5});
  CHECK_THROWS_AS(make_domain_sequence(10, 3, "0.5,0.5", 1), ConfigError);
  CHECK_THROWS_AS(make_domain_sequence(10, 2, "0.5,oops", 1), ConfigError);
}
