#pragma once

#include <cstdint>
#include <vector>

#include "crossrec/rng.hpp"
#include "crossrec/tensor.hpp"

namespace crossrec {

struct EmbeddingTables {
  Tensor items;      // (|I| x k)
  Tensor domains;    // (|D| x k)
  Tensor positions;  // (n_max x k)
  Tensor trans_w;    // (k x k), applied to row vectors
  Tensor trans_b;    // (k)

  static EmbeddingTables init(std::size_t num_items, std::size_t num_domains,
                              std::size_t n_max, std::size_t k, Rng& rng);
};

Tensor lookup_items(Tape& tape, const EmbeddingTables& tables,
                    const std::vector<std::int64_t>& items);

// Transition-aware positional embedding (TAPE). Adds the absolute
// positional row and, at positions followed by a different domain, the
// transition term next_dom_emb * (dom_emb * W + b). The position after the
// last one is taken to be query_domain, so training and inference see the
// same rule. With enabled=false the output is exactly item_emb + positions.
Tensor transition_aware_embed(Tape& tape, const EmbeddingTables& tables,
                              const Tensor& item_emb,
                              const std::vector<std::int64_t>& domains,
                              std::int64_t query_domain, bool enabled);

}  // namespace crossrec
