#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossrec/model.hpp"

namespace crossrec {

// Exact causal score-evaluation counts for one sequence. The cost unit is a
// single query.key dot product; projections and value aggregation are
// excluded since they are identical across masked and dense variants.
struct AttentionCostReport {
  std::vector<std::size_t> domain_sizes;  // s_d, indexed by domain
  std::size_t total = 0;                  // S
  std::size_t num_domains = 0;            // |D| used for the DDSR count
  std::uint64_t dense_causal_pairs = 0;   // S(S+1)/2
  std::uint64_t intra_causal_pairs = 0;   // sum_d s_d(s_d+1)/2
  std::uint64_t sum_squares = 0;          // sum_d s_d^2
  std::uint64_t ddsr_pairs = 0;           // |D| * S(S+1)/2
  double delta = 0.0;                     // max_d s_d / S
  double ratio = 0.0;                     // intra / dense
  double quad_ratio = 0.0;                // sum_squares / S^2
};

// num_domains == 0 means "use the distinct domains of the sequence"; pass
// the catalog size to match the model's domain-state layer.
AttentionCostReport count_attention_pairs(const std::vector<std::int64_t>& domains,
                                          std::size_t num_domains = 0);

struct InstrumentedResult {
  Tensor h_final;
  std::uint64_t intra_score_ops = 0;
  std::uint64_t ddsr_score_ops = 0;
  AttentionCostReport expected;
};

// Runs a forward pass with score counters and cross-checks the measured
// intra-domain count against the closed-form count times heads and layers.
// A mismatch throws CheckError naming both numbers.
InstrumentedResult instrumented_forward(const Model& model, const UserSequence& seq,
                                        std::int64_t query_domain);

struct BenchRow {
  std::size_t total = 0;  // S
  std::size_t num_domains = 0;
  std::string distribution;
  std::uint64_t dense_pairs = 0;
  std::uint64_t intra_pairs = 0;
  double ratio = 0.0;
  double delta = 0.0;
  double median_ms_dense = 0.0;
  double median_ms_intra = 0.0;
};

struct BenchConfig {
  std::string distribution = "equal";  // "equal" or comma proportions, e.g. "0.5,0.3,0.2"
  std::size_t num_domains = 4;
  std::vector<std::size_t> sizes{64, 128, 256};
  std::size_t repeats = 5;
  std::size_t k = 64;
  std::size_t heads = 4;
  std::uint64_t seed = 7;
};

// Wall-clock comparison of dense vs intra-masked attention layers.
// Informational: the binding contract is op-count exactness.
std::vector<BenchRow> bench(const BenchConfig& cfg);
std::string format_bench_table(const std::vector<BenchRow>& rows);

// Domain layout used by bench and tests: proportions realized exactly,
// random interleaving from the seed.
std::vector<std::int64_t> make_domain_sequence(std::size_t total, std::size_t num_domains,
                                               const std::string& distribution,
                                               std::uint64_t seed);

}  // namespace crossrec
