#include "crossrec/ddsr.hpp"

#include <cmath>

#include "crossrec/attention.hpp"

namespace crossrec {

DdsrParams DdsrParams::init(std::size_t k, Rng& rng) {
  auto normal = [&](Shape shape) {
    std::size_t total = 1;
    for (auto d : shape) total *= d;
    std::vector<double> v(total);
    for (auto& x : v) x = rng.normal(0.0, 0.02);
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };
  DdsrParams p;
  p.w_kv = normal({k, 2 * k});
  p.b_kv = Tensor::zeros({2 * k}, true);
  p.w_q = normal({k, k});
  p.b_q = Tensor::zeros({k}, true);
  return p;
}

std::optional<std::size_t> phi(const std::vector<std::int64_t>& domains, std::int64_t d,
                               std::size_t i) {
  if (i >= domains.size()) throw ShapeError("phi: position out of range");
  for (std::size_t j = i + 1; j-- > 0;) {
    if (domains[j] == d) return j;
  }
  return std::nullopt;
}

DomainStateMatrix build_domain_states(Tape& tape, const Tensor& h_prev,
                                      const std::vector<std::int64_t>& domains,
                                      std::size_t num_domains) {
  std::size_t n = domains.size();
  if (h_prev.ndim() != 2 || h_prev.dim(0) != n) {
    throw ShapeError("build_domain_states: hidden states " + shape_str(h_prev.shape()) +
                     " do not match " + std::to_string(n) + " domains");
  }
  DomainStateMatrix out;
  out.num_domains = num_domains;
  out.n = n;
  out.present.assign(num_domains * n, 0);

  std::vector<std::int64_t> gather(num_domains * n, -1);
  std::vector<std::int64_t> last(num_domains, -1);
  for (std::size_t i = 0; i < n; ++i) {
    auto d = static_cast<std::size_t>(domains[i]);
    if (d >= num_domains) throw ShapeError("build_domain_states: domain index out of range");
    last[d] = static_cast<std::int64_t>(i);
    for (std::size_t dd = 0; dd < num_domains; ++dd) {
      gather[dd * n + i] = last[dd];
      out.present[dd * n + i] = last[dd] >= 0 ? 1 : 0;
    }
  }
  out.states = tape.rows(h_prev, gather, {num_domains, n});
  return out;
}

Tensor ddsr_attend(Tape& tape, const Tensor& h_prev, const DomainStateMatrix& states,
                   const DdsrParams& params, std::size_t pad_len, bool exclude_absent,
                   Tensor* out_weights) {
  std::size_t n = h_prev.dim(0);
  std::size_t k = h_prev.dim(1);
  std::size_t num_domains = states.num_domains;
  if (states.n != n) throw ShapeError("ddsr_attend: state matrix length mismatch");

  Tensor kv = tape.add(tape.matmul(h_prev, params.w_kv), params.b_kv);  // (n x 2k)
  Tensor keys = tape.slice_last(kv, 0, k);
  Tensor vals = tape.slice_last(kv, k, k);
  Tensor queries = tape.add(tape.matmul(states.states, params.w_q), params.b_q);  // (|D| x n x k)

  MaskSpec causal = causal_mask(n, pad_len);
  double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));
  Tensor scores = tape.masked_scores(queries, keys, causal.as_bool_mask(), nullptr, inv_sqrt_k,
                                     ScoreKind::Ddsr);
  BoolMask tiled = causal.as_bool_mask().tiled(num_domains);
  Tensor weights = tape.softmax_rows(scores, &tiled);
  if (out_weights) *out_weights = weights;

  Tensor per_domain = tape.matmul(weights, vals);  // (|D| x n x k)
  if (exclude_absent) {
    std::vector<double> keep(states.present.begin(), states.present.end());
    per_domain = tape.mul(per_domain,
                          Tensor::from_values({num_domains, n, 1}, std::move(keep)));
  }
  return tape.layer_norm(tape.sum_leading(per_domain));
}

Tensor combine(Tape& tape, const Tensor& h_layer, const Tensor& c) {
  if (h_layer.shape() != c.shape()) {
    throw ShapeError("combine: shapes differ, " + shape_str(h_layer.shape()) + " vs " +
                     shape_str(c.shape()));
  }
  return tape.add(h_layer, c);
}

}  // namespace crossrec
