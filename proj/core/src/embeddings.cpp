#include "crossrec/embeddings.hpp"

#include <numeric>

namespace crossrec {

namespace {

Tensor normal_table(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_values({rows, cols}, std::move(v), true);
}

}  // namespace

EmbeddingTables EmbeddingTables::init(std::size_t num_items, std::size_t num_domains,
                                      std::size_t n_max, std::size_t k, Rng& rng) {
  EmbeddingTables t;
  t.items = normal_table(num_items, k, 0.02, rng);
  t.domains = normal_table(num_domains, k, 0.02, rng);
  t.positions = normal_table(n_max, k, 0.02, rng);
  // Near-identity transition map keeps the early transition term a mild
  // modulation of the previous domain embedding.
  std::vector<double> w(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      w[i * k + j] = (i == j ? 1.0 : 0.0) + 0.02 * rng.normal();
    }
  }
  t.trans_w = Tensor::from_values({k, k}, std::move(w), true);
  t.trans_b = Tensor::zeros({k}, true);
  return t;
}

Tensor lookup_items(Tape& tape, const EmbeddingTables& tables,
                    const std::vector<std::int64_t>& items) {
  return tape.rows(tables.items, items, {items.size()});
}

Tensor transition_aware_embed(Tape& tape, const EmbeddingTables& tables,
                              const Tensor& item_emb,
                              const std::vector<std::int64_t>& domains,
                              std::int64_t query_domain, bool enabled) {
  std::size_t n = domains.size();
  if (item_emb.ndim() != 2 || item_emb.dim(0) != n) {
    throw ShapeError("transition_aware_embed: item embeddings " + shape_str(item_emb.shape()) +
                     " do not match " + std::to_string(n) + " domains");
  }
  if (n > tables.positions.dim(0)) {
    throw ShapeError("transition_aware_embed: sequence longer than positional table");
  }
  std::vector<std::int64_t> pos_idx(n);
  std::iota(pos_idx.begin(), pos_idx.end(), 0);
  Tensor pos = tape.rows(tables.positions, pos_idx, {n});
  Tensor base = tape.add(item_emb, pos);
  if (!enabled) return base;

  std::vector<std::int64_t> next(n);
  for (std::size_t i = 0; i + 1 < n; ++i) next[i] = domains[i + 1];
  next[n - 1] = query_domain;

  std::vector<double> transition(n);
  for (std::size_t i = 0; i < n; ++i) transition[i] = next[i] != domains[i] ? 1.0 : 0.0;

  Tensor cur_emb = tape.rows(tables.domains, domains, {n});
  Tensor next_emb = tape.rows(tables.domains, next, {n});
  Tensor mapped = tape.add(tape.matmul(cur_emb, tables.trans_w), tables.trans_b);
  Tensor r = tape.mul(tape.mul(next_emb, mapped),
                      Tensor::from_values({n, 1}, std::move(transition)));
  return tape.add(base, r);
}

}  // namespace crossrec
