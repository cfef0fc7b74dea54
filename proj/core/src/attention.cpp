#include "crossrec/attention.hpp"

#include <cmath>

namespace crossrec {

namespace {

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::size_t total = 1;
  for (auto d : shape) total *= d;
  std::vector<double> v(total);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace

LayerParams LayerParams::init(std::size_t k, std::size_t heads, std::size_t k_ff, Rng& rng) {
  if (heads == 0 || k % heads != 0) {
    throw ConfigError("attention: k must be divisible by a positive head count");
  }
  LayerParams p;
  p.w_attn = normal_init({k, 4 * k}, 0.02, rng);
  p.b_attn = Tensor::zeros({4 * k}, true);
  p.w_ff1 = normal_init({k, k_ff}, 0.02, rng);
  p.b_ff1 = Tensor::zeros({k_ff}, true);
  p.w_ff2 = normal_init({k_ff, k}, 0.02, rng);
  p.b_ff2 = Tensor::zeros({k}, true);
  p.heads = heads;
  return p;
}

MaskSpec build_mask(const std::vector<std::int64_t>& domains, std::size_t pad_len) {
  std::size_t n = domains.size();
  MaskSpec m;
  m.n = n;
  m.allow.assign(n * n, 0);
  for (std::size_t i = pad_len; i < n; ++i) {
    for (std::size_t j = pad_len; j <= i; ++j) {
      if (domains[i] == domains[j]) m.allow[i * n + j] = 1;
    }
  }
  return m;
}

MaskSpec causal_mask(std::size_t n, std::size_t pad_len) {
  MaskSpec m;
  m.n = n;
  m.allow.assign(n * n, 0);
  for (std::size_t i = pad_len; i < n; ++i) {
    for (std::size_t j = pad_len; j <= i; ++j) m.allow[i * n + j] = 1;
  }
  return m;
}

double alibi_slope(std::size_t head, std::size_t heads) {
  return std::pow(2.0, -8.0 * static_cast<double>(head) / static_cast<double>(heads));
}

Tensor alibi_bias(std::size_t n, std::size_t heads) {
  std::vector<double> bias(heads * n * n, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    double slope = alibi_slope(h + 1, heads);
    double* plane = bias.data() + h * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        plane[i * n + j] = -slope * static_cast<double>(i - j);
      }
    }
  }
  return Tensor::from_values({heads, n, n}, std::move(bias));
}

SplitHeads project_split(Tape& tape, const Tensor& h_prev, const LayerParams& params) {
  std::size_t k = params.w_attn.dim(0);
  if (h_prev.ndim() != 2 || h_prev.dim(1) != k) {
    throw ShapeError("project_split: input " + shape_str(h_prev.shape()) +
                     " does not match projection " + shape_str(params.w_attn.shape()));
  }
  std::size_t n = h_prev.dim(0);
  std::size_t h = params.heads;
  std::size_t d = k / h;
  Tensor proj = tape.add(tape.matmul(h_prev, params.w_attn), params.b_attn);
  auto to_heads = [&](std::size_t part) {
    Tensor flat = tape.slice_last(proj, part * k, k);            // (n x k)
    Tensor split = tape.reshape(flat, {n, h, d});
    return tape.transpose(split, {1, 0, 2});                     // (h x n x d)
  };
  SplitHeads out;
  out.q = to_heads(0);
  out.k = to_heads(1);
  out.v = to_heads(2);
  out.u = to_heads(3);
  return out;
}

Tensor attend(Tape& tape, const SplitHeads& qkvu, const MaskSpec& mask, const Tensor& bias,
              const LayerParams& params, const Tensor* residual, Tensor* out_weights) {
  std::size_t h = qkvu.q.dim(0);
  std::size_t n = qkvu.q.dim(1);
  std::size_t d = qkvu.q.dim(2);
  std::size_t k = h * d;
  if (mask.n != n) throw ShapeError("attend: mask size does not match sequence length");

  double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));
  Tensor scores = tape.masked_scores(qkvu.q, qkvu.k, mask.as_bool_mask(), &bias, inv_sqrt_k,
                                     ScoreKind::IntraAttention);
  BoolMask tiled = mask.as_bool_mask().tiled(h);
  Tensor weights = tape.softmax_rows(scores, &tiled);
  if (out_weights) *out_weights = weights;

  Tensor attended = tape.matmul(weights, qkvu.v);                       // (h x n x d)
  Tensor merged = tape.reshape(tape.transpose(attended, {1, 0, 2}), {n, k});
  Tensor gate = tape.reshape(tape.transpose(qkvu.u, {1, 0, 2}), {n, k});
  Tensor gated = tape.mul(tape.layer_norm(merged), gate);

  Tensor hidden = tape.silu(tape.add(tape.matmul(gated, params.w_ff1), params.b_ff1));
  Tensor out = tape.add(tape.matmul(hidden, params.w_ff2), params.b_ff2);
  if (residual) out = tape.add(out, *residual);
  return out;
}

}  // namespace crossrec
