#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "crossrec/rng.hpp"
#include "crossrec/tensor.hpp"

namespace crossrec {

struct DdsrParams {
  Tensor w_kv;  // (k x 2k)
  Tensor b_kv;  // (2k)
  Tensor w_q;   // (k x k)
  Tensor b_q;   // (k)

  static DdsrParams init(std::size_t k, Rng& rng);
};

// Latest position <= i whose domain equals d, if any. Positions 0-based.
std::optional<std::size_t> phi(const std::vector<std::int64_t>& domains, std::int64_t d,
                               std::size_t i);

// states[d][i] = h_prev[phi_d(i)] when domain d has occurred by position i,
// else the zero row; present tracks occurrence and is monotone in i.
struct DomainStateMatrix {
  Tensor states;                       // (|D| x n x k)
  std::vector<std::uint8_t> present;   // |D| x n row-major
  std::size_t num_domains = 0;
  std::size_t n = 0;

  bool is_present(std::size_t d, std::size_t i) const { return present[d * n + i] != 0; }
};

// One left-to-right sweep carrying the last position per domain.
DomainStateMatrix build_domain_states(Tape& tape, const Tensor& h_prev,
                                      const std::vector<std::int64_t>& domains,
                                      std::size_t num_domains);

// Domain-state attention: K,V from a 2k projection of h_prev, per-domain
// queries from the state matrix, causal softmax over key positions, summed
// over domains and layer-normalized. Single head. With exclude_absent,
// (d, i) terms where domain d has not occurred by i leave the sum;
// otherwise their zero-state queries participate literally. Padded
// positions are excluded from keys and yield zero output rows.
Tensor ddsr_attend(Tape& tape, const Tensor& h_prev, const DomainStateMatrix& states,
                   const DdsrParams& params, std::size_t pad_len = 0,
                   bool exclude_absent = false, Tensor* out_weights = nullptr);

Tensor combine(Tape& tape, const Tensor& h_layer, const Tensor& c);

}  // namespace crossrec
