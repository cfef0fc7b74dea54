#pragma once

#include <cstdint>
#include <vector>

#include "crossrec/rng.hpp"
#include "crossrec/tensor.hpp"

namespace crossrec {

struct LayerParams {
  Tensor w_attn;  // (k x 4k)
  Tensor b_attn;  // (4k)
  Tensor w_ff1;   // (k x k_ff)
  Tensor b_ff1;   // (k_ff)
  Tensor w_ff2;   // (k_ff x k)
  Tensor b_ff2;   // (k)
  std::size_t heads = 1;

  static LayerParams init(std::size_t k, std::size_t heads, std::size_t k_ff, Rng& rng);
};

// allow[i][j] == (j <= i) && same domain && neither position padded.
// Padding, when present, occupies the leading pad_len positions.
struct MaskSpec {
  std::size_t n = 0;
  std::vector<std::uint8_t> allow;  // n x n row-major

  bool allowed(std::size_t i, std::size_t j) const { return allow[i * n + j] != 0; }
  BoolMask as_bool_mask() const { return BoolMask{{n, n}, allow}; }
};

MaskSpec build_mask(const std::vector<std::int64_t>& domains, std::size_t pad_len = 0);
// Causal-only mask for the dense baseline and for the domain-state layer.
MaskSpec causal_mask(std::size_t n, std::size_t pad_len = 0);

// bias[head][i][j] = -slope(head) * (i - j) for j <= i, with the geometric
// slope schedule 2^(-8*head/h), head = 1..h. Distances are global sequence
// positions, also across domain gaps. Constant: no gradient.
Tensor alibi_bias(std::size_t n, std::size_t heads);
double alibi_slope(std::size_t head, std::size_t heads);  // head is 1-based

struct SplitHeads {
  Tensor q, k, v, u;  // each (h x n x k/h)
};

// Projects the layer input to 4k features with a fixed Q,K,V,U split order,
// then separates heads.
SplitHeads project_split(Tape& tape, const Tensor& h_prev, const LayerParams& params);

// Masked, biased, gated attention block. Scores are (QK^T + bias)/sqrt(k)
// with disallowed pairs excluded from both evaluation and the softmax.
// Output is FFN(layer_norm(A V) * U) plus `residual` when given. When
// out_weights is non-null it receives the (h x n x n) attention weights.
Tensor attend(Tape& tape, const SplitHeads& qkvu, const MaskSpec& mask, const Tensor& bias,
              const LayerParams& params, const Tensor* residual = nullptr,
              Tensor* out_weights = nullptr);

}  // namespace crossrec
