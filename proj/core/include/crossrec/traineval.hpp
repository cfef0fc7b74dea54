#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "crossrec/dataio.hpp"
#include "crossrec/model.hpp"

namespace crossrec {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::size_t batch_size = 8;
  std::size_t steps = 500;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const;
};

// Adam moment buffers, kept alongside the model for bit-exact resumption.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;  // one mean NLL per optimizer step
  std::size_t degenerate_steps = 0;
};

// Per optimizer step: sample a batch of sequences, accumulate the pooled
// mean sampled-softmax NLL over their next-item steps, backprop, clip the
// global gradient norm and apply the Adam update. Batch membership and
// negative draws are reseeded from (seed, step), so a resumed run replays
// the interrupted one exactly.
TrainResult train(Model& model, const Catalog& catalog,
                  const std::vector<UserSequence>& sequences, const TrainConfig& cfg,
                  AdamState* state = nullptr);

struct MetricsReport {
  std::map<int, double> hr;    // k in {1, 10, 50, 100, 200}, percentage points
  double mrr = 0.0;
  std::map<int, double> ndcg;  // k in {10, 50, 100, 200}
  std::size_t num_users = 0;

  static const std::vector<int>& hr_cutoffs();
  static const std::vector<int>& ndcg_cutoffs();
  void validate() const;
};

MetricsReport metrics_from_ranks(const std::vector<std::size_t>& ranks);

// Leave-one-out evaluation: rank each held-out target from the final hidden
// state of its full prefix, with the target domain supplied as the prior.
// Read-only on the model; users evaluated in parallel when threads > 1.
MetricsReport evaluate(const Model& model, const Catalog& catalog, const LeaveOneOut& split,
                       std::size_t threads = 1);

struct VariantSpec {
  std::string name;
  bool use_tape = true;
  bool use_ddsr = true;
  bool intra_domain_mask = true;
};

// The five ablation rows: full model, w/o DDSR, w/o TAPE, intra-masking
// only, and the dense causal ALiBi baseline.
std::vector<VariantSpec> table_variants();

struct VariantResult {
  VariantSpec variant;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> per_seed;
  MetricsReport mean;
  MetricsReport stddev;  // population stddev over seeds
};

std::vector<VariantResult> run_matrix(const Corpus& corpus, const ModelConfig& base_cfg,
                                      const TrainConfig& train_cfg,
                                      const std::vector<VariantSpec>& variants,
                                      const std::vector<std::uint64_t>& seeds);

// Stable JSON report formats (documented in the README).
std::string metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const std::string& text);
std::string matrix_to_json(const std::vector<VariantResult>& results);
std::vector<VariantResult> matrix_from_json(const std::string& text);

}  // namespace crossrec
