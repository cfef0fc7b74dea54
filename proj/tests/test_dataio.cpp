#include <cmath>
#include <map>
#include <sstream>

#include "crossrec/dataio.hpp"
#include "crossrec/rng.hpp"
#include "crossrec/synthetic.hpp"
#include "doctest.h"

using namespace crossrec;

namespace {

std::vector<InteractionEvent> repeated_events(std::size_t users, std::size_t items) {
  // Every user interacts with every item once, timestamps in item order.
  std::vector<InteractionEvent> events;
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t i = 0; i < items; ++i) {
      events.push_back({"u" + std::to_string(u), "i" + std::to_string(i), "d0",
                        static_cast<std::int64_t>(i)});
    }
  }
  return events;
}

}  // namespace

TEST_CASE("parse events") {
  SUBCASE("empty input") {
    std::istringstream in("");
    CHECK(parse_events(in, "test").empty());
  }
  SUBCASE("three well-formed lines keep file order") {
    std::istringstream in("u1\ti1\td1\t10\nu2\ti2\td2\t5\nu1\ti3\td1\t7\n");
    auto events = parse_events(in, "test");
    REQUIRE(events.size() == 3);
    CHECK(events[0].item == "i1");
    CHECK(events[1].item == "i2");
    CHECK(events[2].item == "i3");
  }
  SUBCASE("missing timestamp names the line") {
    std::istringstream in("u1\ti1\td1\t10\nu2\ti2\td2\n");
    CHECK_THROWS_WITH_AS(parse_events(in, "test"), doctest::Contains("line 2"), DataError);
  }
  SUBCASE("comments and blank lines are skipped") {
    std::istringstream in("# header\nu1\ti1\td1\t1\n\n");
    CHECK(parse_events(in, "test").size() == 1);
  }
  SUBCASE("item under two domains is rejected") {
    std::istringstream in("u1\ti1\td1\t1\nu2\ti1\td2\t2\n");
    CHECK_THROWS_WITH_AS(parse_events(in, "test"), doctest::Contains("appears under domains"),
                         DataError);
  }
}

TEST_CASE("preprocess applies the occurrence filters") {
  SUBCASE("singleton items all fail the 5-core") {
    std::vector<InteractionEvent> events;
    for (int i = 0; i < 12; ++i) {
      events.push_back({"u0", "i" + std::to_string(i), "d0", i});
    }
    CHECK_THROWS_WITH_AS(preprocess(events), doctest::Contains("empty after filtering"),
                         DataError);
  }
  SUBCASE("6 users sharing 10 items are all retained") {
    auto corpus = preprocess(repeated_events(6, 10));
    CHECK(corpus.sequences.size() == 6);
    for (const auto& seq : corpus.sequences) CHECK(seq.size() == 10);
    CHECK(corpus.catalog.num_items() == 10);
    check_corpus(corpus);
  }
  SUBCASE("timestamps are sorted with file order breaking ties") {
    std::vector<InteractionEvent> events = repeated_events(6, 10);
    // Shuffle one user's timestamps: give u0 reversed times.
    for (std::size_t i = 0; i < 10; ++i) {
      events[i].timestamp = static_cast<std::int64_t>(9 - i);
    }
    auto corpus = preprocess(events);
    // u0 is the lexicographically first user: items should come back reversed.
    const auto& seq = corpus.sequences[0];
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      // items were interned in timestamp order for this user
      CHECK(corpus.catalog.item_ids[static_cast<std::size_t>(seq.items[i])] ==
            "i" + std::to_string(9 - i));
    }
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS_AS(preprocess({}), DataError);
  }
}

TEST_CASE("preprocess reaches a fixed point") {
  // Mixed corpus: a popular core plus a fringe user and fringe items.
  std::vector<InteractionEvent> events = repeated_events(6, 10);
  for (int i = 0; i < 9; ++i) {
    events.push_back({"fringe", "i" + std::to_string(i), "d0", i});
  }
  events.push_back({"u0", "rare", "d0", 100});
  auto corpus = preprocess(events);

  // Re-running preprocess on its own output changes nothing.
  std::vector<InteractionEvent> round;
  for (const auto& seq : corpus.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      round.push_back({"u" + std::to_string(seq.user),
                       corpus.catalog.item_ids[static_cast<std::size_t>(seq.items[i])],
                       corpus.catalog.domain_ids[static_cast<std::size_t>(seq.domains[i])],
                       static_cast<std::int64_t>(i)});
    }
  }
  auto again = preprocess(round);
  REQUIRE(again.sequences.size() == corpus.sequences.size());
  for (std::size_t u = 0; u < again.sequences.size(); ++u) {
    CHECK(again.sequences[u].size() == corpus.sequences[u].size());
  }
}

TEST_CASE("preprocess truncates to the most recent max_len events") {
  auto events = repeated_events(6, 30);
  auto corpus = preprocess(events, 5, 10, 20);
  for (const auto& seq : corpus.sequences) CHECK(seq.size() == 20);
  // Most recent events win: the first 10 items vanish everywhere, so only
  // 20 items survive with dense indices.
  CHECK(corpus.catalog.num_items() == 20);
}

TEST_CASE("split leave one out") {
  UserSequence seq;
  seq.user = 0;
  seq.items = {10, 11, 12};
  seq.domains = {0, 0, 1};

  SUBCASE("train drops the final item") {
    auto split = split_leave_one_out({seq});
    REQUIRE(split.train.size() == 1);
    CHECK(split.train[0].items == std::vector<std::int64_t>{10, 11});
    CHECK(split.targets[0].target_item == 12);
    CHECK(split.targets[0].target_domain == 1);
  }
  SUBCASE("length-2 boundary") {
    UserSequence two;
    two.items = {1, 2};
    two.domains = {0, 0};
    auto split = split_leave_one_out({two});
    CHECK(split.train[0].size() == 1);
  }
  SUBCASE("too-short sequences are rejected") {
    UserSequence one;
    one.items = {1};
    one.domains = {0};
    CHECK_THROWS_AS(split_leave_one_out({one}), DataError);
  }
  SUBCASE("idempotent on the train portion") {
    UserSequence four;
    four.items = {1, 2, 3, 4};
    four.domains = {0, 0, 0, 0};
    auto once = split_leave_one_out({four});
    auto twice = split_leave_one_out(once.train);
    CHECK(twice.train[0].items == std::vector<std::int64_t>{1, 2});
  }
}

TEST_CASE("corpus format round-trips") {
  SynthConfig cfg;
  cfg.num_users = 20;
  cfg.num_domains = 3;
  cfg.items_per_domain = 10;
  cfg.seq_len_min = 10;
  cfg.seq_len_max = 15;
  auto corpus = generate_synthetic(cfg);

  std::ostringstream out;
  write_corpus(out, corpus);
  std::istringstream in(out.str());
  auto back = read_corpus(in, "roundtrip");
  REQUIRE(back.sequences.size() == corpus.sequences.size());
  for (std::size_t u = 0; u < back.sequences.size(); ++u) {
    CHECK(back.sequences[u].items == corpus.sequences[u].items);
    CHECK(back.sequences[u].domains == corpus.sequences[u].domains);
  }
  check_corpus(back);
  for (std::size_t i = 0; i < corpus.catalog.num_items(); ++i) {
    CHECK(back.catalog.domain_of_item[i] == corpus.catalog.domain_of_item[i]);
  }
}

TEST_CASE("synthetic generation") {
  SynthConfig cfg;
  cfg.num_users = 50;
  cfg.seed = 9;

  SUBCASE("same seed twice is identical") {
    auto a = generate_synthetic(cfg);
    auto b = generate_synthetic(cfg);
    REQUIRE(a.sequences.size() == b.sequences.size());
    for (std::size_t u = 0; u < a.sequences.size(); ++u) {
      CHECK(a.sequences[u].items == b.sequences[u].items);
      CHECK(a.sequences[u].domains == b.sequences[u].domains);
    }
  }
  SUBCASE("single domain means all domain indices zero") {
    cfg.num_domains = 1;
    auto corpus = generate_synthetic(cfg);
    for (const auto& seq : corpus.sequences) {
      for (auto d : seq.domains) CHECK(d == 0);
    }
  }
  SUBCASE("sequences respect the partition invariant") {
    auto corpus = generate_synthetic(cfg);
    check_corpus(corpus);
  }
}

namespace {

// Per-user bucket of the most frequent item rank in a domain, or -1.
int top_item_bucket(const UserSequence& seq, std::int64_t domain, std::size_t items_per_domain,
                    int buckets) {
  std::map<std::int64_t, int> counts;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.domains[i] == domain) ++counts[seq.items[i]];
  }
  if (counts.empty()) return -1;
  std::int64_t best = counts.begin()->first;
  int best_count = counts.begin()->second;
  for (auto& [item, c] : counts) {
    if (c > best_count) {
      best = item;
      best_count = c;
    }
  }
  auto rank = static_cast<std::size_t>(best) % items_per_domain;
  return static_cast<int>(rank * static_cast<std::size_t>(buckets) / items_per_domain);
}

struct Contingency {
  std::vector<std::vector<double>> counts;
  double total = 0.0;
};

Contingency contingency_table(const Corpus& corpus, const SynthConfig& cfg, int buckets) {
  Contingency table;
  table.counts.assign(buckets, std::vector<double>(buckets, 0.0));
  for (const auto& seq : corpus.sequences) {
    int x = top_item_bucket(seq, 0, cfg.items_per_domain, buckets);
    int y = top_item_bucket(seq, 1, cfg.items_per_domain, buckets);
    if (x < 0 || y < 0) continue;
    table.counts[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] += 1.0;
    table.total += 1.0;
  }
  return table;
}

double chi_square_stat(const Contingency& t) {
  std::size_t b = t.counts.size();
  std::vector<double> row(b, 0.0), col(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      row[i] += t.counts[i][j];
      col[j] += t.counts[i][j];
    }
  }
  double stat = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double expected = row[i] * col[j] / t.total;
      if (expected > 0.0) {
        double diff = t.counts[i][j] - expected;
        stat += diff * diff / expected;
      }
    }
  }
  return stat;
}

double mutual_information(const Contingency& t) {
  std::size_t b = t.counts.size();
  std::vector<double> row(b, 0.0), col(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      row[i] += t.counts[i][j];
      col[j] += t.counts[i][j];
    }
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double pxy = t.counts[i][j] / t.total;
      if (pxy <= 0.0) continue;
      double px = row[i] / t.total;
      double py = col[j] / t.total;
      mi += pxy * std::log(pxy / (px * py));
    }
  }
  return mi;
}

}  // namespace

TEST_CASE("cross_affinity=0 leaves domains independent (chi-square)") {
  SynthConfig cfg;
  cfg.num_users = 10000;
  cfg.num_domains = 2;
  cfg.items_per_domain = 40;
  cfg.seq_len_min = 12;
  cfg.seq_len_max = 24;
  cfg.cross_affinity = 0.0;
  cfg.seed = 11;
  auto corpus = generate_synthetic(cfg);
  auto table = contingency_table(corpus, cfg, 4);
  REQUIRE(table.total > 5000);
  // dof = (4-1)^2 = 9; chi2 critical value at p = 0.01 is 21.666.
  CHECK(chi_square_stat(table) < 21.666);
}

TEST_CASE("cross_affinity=1 yields positive cross-domain mutual information") {
  SynthConfig cfg;
  cfg.num_users = 10000;
  cfg.num_domains = 2;
  cfg.items_per_domain = 40;
  cfg.seq_len_min = 12;
  cfg.seq_len_max = 24;
  cfg.cross_affinity = 1.0;
  cfg.seed = 13;
  auto corpus = generate_synthetic(cfg);
  auto table = contingency_table(corpus, cfg, 4);
  double observed = mutual_information(table);

  // Permutation null: shuffle the Y marginal, 3 sigma above the null mean.
  std::vector<int> xs, ys;
  for (const auto& seq : corpus.sequences) {
    int x = top_item_bucket(seq, 0, cfg.items_per_domain, 4);
    int y = top_item_bucket(seq, 1, cfg.items_per_domain, 4);
    if (x >= 0 && y >= 0) {
      xs.push_back(x);
      ys.push_back(y);
    }
  }
  Rng rng(99);
  std::vector<double> null_mis;
  for (int perm = 0; perm < 100; ++perm) {
    std::vector<int> shuffled = ys;
    for (std::size_t i = shuffled.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.bounded(i));
      std::swap(shuffled[i - 1], shuffled[j]);
    }
    Contingency t;
    t.counts.assign(4, std::vector<double>(4, 0.0));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      t.counts[static_cast<std::size_t>(xs[i])][static_cast<std::size_t>(shuffled[i])] += 1.0;
      t.total += 1.0;
    }
    null_mis.push_back(mutual_information(t));
  }
  double mean = 0.0;
  for (double v : null_mis) mean += v;
  mean /= static_cast<double>(null_mis.size());
  double var = 0.0;
  for (double v : null_mis) var += (v - mean) * (v - mean);
  double sigma = std::sqrt(var / static_cast<double>(null_mis.size()));
  CHECK(observed > mean + 3.0 * sigma);
}
