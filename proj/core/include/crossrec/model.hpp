#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crossrec/attention.hpp"
#include "crossrec/dataio.hpp"
#include "crossrec/ddsr.hpp"
#include "crossrec/embeddings.hpp"
#include "crossrec/rng.hpp"
#include "crossrec/tensor.hpp"

namespace crossrec {

struct ModelConfig {
  std::size_t k = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t n_max = 200;
  std::size_t num_negatives = 128;
  bool use_tape = true;
  bool use_ddsr = true;
  bool intra_domain_mask = true;
  bool ddsr_exclude_absent_domains = false;
  bool use_residual = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Model {
  ModelConfig cfg;
  std::size_t num_items = 0;
  std::size_t num_domains = 0;
  EmbeddingTables emb;
  std::vector<LayerParams> layers;
  std::vector<DdsrParams> ddsr;

  static Model init(const ModelConfig& cfg, std::size_t num_items, std::size_t num_domains);

  // Stable name -> tensor view of every learnable parameter.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  void zero_grads() const;
};

// Full forward pass: TAPE input embedding, then `layers` stacked blocks of
// intra-domain masked attention combined with the domain-state layer.
// query_domain supplies the next-domain prior for the final position.
Tensor forward(Tape& tape, const Model& model, const UserSequence& seq,
               std::int64_t query_domain);

struct ForwardTrace {
  Tensor h_final;
  std::vector<Tensor> attention_weights;  // per layer, (h x n x n)
  std::vector<Tensor> ddsr_weights;       // per layer, (|D| x n x n); empty if DDSR off
};

ForwardTrace forward_traced(Tape& tape, const Model& model, const UserSequence& seq,
                            std::int64_t query_domain);

struct StepLoss {
  Tensor loss_sum;                 // scalar sum over steps; undefined when steps == 0
  std::size_t steps = 0;           // counted prediction steps
  std::size_t degenerate_steps = 0;  // single-item domains, contributing 0
};

// Sampled-softmax negative log-likelihood summed over the sequence's
// next-item steps. Negatives are drawn uniformly without replacement from
// the target's domain, excluding the target; when num_negatives covers the
// whole domain the full domain is scored instead. Draws consume only `rng`,
// never parameter values, so a reseeded rng reproduces the candidate sets.
StepLoss sequence_loss(Tape& tape, const Model& model, const Catalog& catalog,
                       const UserSequence& seq, Rng& rng);

// Candidate sampling exposed for tests: target first, then negatives.
std::vector<std::int64_t> sample_candidates(const Catalog& catalog, std::int64_t target_item,
                                            std::int64_t target_domain,
                                            std::size_t num_negatives, Rng& rng);

// Rank of the target among all items of its domain under pessimistic
// tie-breaking (equal scores count against the target). 1-based.
std::size_t rank_target(const Model& model, const Catalog& catalog,
                        std::span<const double> hidden, std::int64_t target_item,
                        std::int64_t target_domain);

// Final-position hidden state for an evaluation prefix, computed without
// recording gradients.
std::vector<double> eval_hidden(const Model& model, const UserSequence& prefix,
                                std::int64_t query_domain);

// Checkpoints hold named tensors plus the serialized config and catalog
// sizes; save/load round-trips bit-exactly.
struct Checkpoint {
  ModelConfig cfg;
  std::size_t num_items = 0;
  std::size_t num_domains = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint checkpoint_of(const Model& model, std::uint64_t step = 0);
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace crossrec
