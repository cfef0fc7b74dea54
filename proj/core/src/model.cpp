#include "crossrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace crossrec {

void ModelConfig::validate() const {
  if (k == 0 || heads == 0 || k % heads != 0) {
    throw ConfigError("model: k must be a positive multiple of heads");
  }
  if (num_negatives < 1) throw ConfigError("model: num_negatives must be >= 1");
  if (n_max < 2) throw ConfigError("model: n_max must be >= 2");
}

Model Model::init(const ModelConfig& cfg, std::size_t num_items, std::size_t num_domains) {
  cfg.validate();
  if (num_items == 0 || num_domains == 0) {
    throw ConfigError("model: catalog must have items and domains");
  }
  Model m;
  m.cfg = cfg;
  m.num_items = num_items;
  m.num_domains = num_domains;
  Rng init_rng = Rng(cfg.seed).child("init");
  m.emb = EmbeddingTables::init(num_items, num_domains, cfg.n_max, cfg.k, init_rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    m.layers.push_back(LayerParams::init(cfg.k, cfg.heads, 4 * cfg.k, init_rng));
    m.ddsr.push_back(DdsrParams::init(cfg.k, init_rng));
  }
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("emb.items", emb.items);
  out.emplace_back("emb.domains", emb.domains);
  out.emplace_back("emb.positions", emb.positions);
  out.emplace_back("emb.trans_w", emb.trans_w);
  out.emplace_back("emb.trans_b", emb.trans_b);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "w_attn", layers[l].w_attn);
    out.emplace_back(p + "b_attn", layers[l].b_attn);
    out.emplace_back(p + "w_ff1", layers[l].w_ff1);
    out.emplace_back(p + "b_ff1", layers[l].b_ff1);
    out.emplace_back(p + "w_ff2", layers[l].w_ff2);
    out.emplace_back(p + "b_ff2", layers[l].b_ff2);
    out.emplace_back(p + "ddsr.w_kv", ddsr[l].w_kv);
    out.emplace_back(p + "ddsr.b_kv", ddsr[l].b_kv);
    out.emplace_back(p + "ddsr.w_q", ddsr[l].w_q);
    out.emplace_back(p + "ddsr.b_q", ddsr[l].b_q);
  }
  return out;
}

void Model::zero_grads() const {
  for (auto& [name, p] : named_parameters()) Tensor(p).zero_grad();
}

namespace {

ForwardTrace run_forward(Tape& tape, const Model& model, const UserSequence& seq,
                         std::int64_t query_domain, bool traced) {
  const ModelConfig& cfg = model.cfg;
  std::size_t n = seq.size();
  if (n == 0) throw DataError("forward: empty sequence");
  if (n > cfg.n_max) throw DataError("forward: sequence longer than n_max");
  if (query_domain < 0 || query_domain >= static_cast<std::int64_t>(model.num_domains)) {
    throw DataError("forward: query domain out of range");
  }

  Tensor item_emb = lookup_items(tape, model.emb, seq.items);
  Tensor h = transition_aware_embed(tape, model.emb, item_emb, seq.domains, query_domain,
                                    cfg.use_tape);

  MaskSpec mask = cfg.intra_domain_mask ? build_mask(seq.domains) : causal_mask(n);
  Tensor bias = alibi_bias(n, cfg.heads);

  ForwardTrace trace;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    SplitHeads qkvu = project_split(tape, h, model.layers[l]);
    Tensor* weights_out = nullptr;
    if (traced) {
      trace.attention_weights.emplace_back();
      weights_out = &trace.attention_weights.back();
    }
    Tensor h_layer = attend(tape, qkvu, mask, bias, model.layers[l],
                            cfg.use_residual ? &h : nullptr, weights_out);
    if (cfg.use_ddsr) {
      DomainStateMatrix states = build_domain_states(tape, h, seq.domains, model.num_domains);
      Tensor* ddsr_out = nullptr;
      if (traced) {
        trace.ddsr_weights.emplace_back();
        ddsr_out = &trace.ddsr_weights.back();
      }
      Tensor c = ddsr_attend(tape, h, states, model.ddsr[l], 0,
                             cfg.ddsr_exclude_absent_domains, ddsr_out);
      h = combine(tape, h_layer, c);
    } else {
      h = h_layer;
    }
  }
  trace.h_final = h;
  return trace;
}

}  // namespace

Tensor forward(Tape& tape, const Model& model, const UserSequence& seq,
               std::int64_t query_domain) {
  return run_forward(tape, model, seq, query_domain, false).h_final;
}

ForwardTrace forward_traced(Tape& tape, const Model& model, const UserSequence& seq,
                            std::int64_t query_domain) {
  return run_forward(tape, model, seq, query_domain, true);
}

std::vector<std::int64_t> sample_candidates(const Catalog& catalog, std::int64_t target_item,
                                            std::int64_t target_domain,
                                            std::size_t num_negatives, Rng& rng) {
  const auto& pool = catalog.domain_items[static_cast<std::size_t>(target_domain)];
  std::vector<std::int64_t> candidates{target_item};
  if (pool.size() <= 1) return candidates;

  // Index space over the domain list with the target removed.
  std::size_t target_pos = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i] == target_item) {
      target_pos = i;
      break;
    }
  }
  std::size_t others = pool.size() - 1;
  auto nth_other = [&](std::size_t idx) {
    return pool[idx < target_pos ? idx : idx + 1];
  };

  if (num_negatives >= others) {
    for (std::size_t i = 0; i < others; ++i) candidates.push_back(nth_other(i));
    return candidates;
  }

  // Floyd's sampling: num_negatives distinct draws from [0, others).
  std::unordered_set<std::size_t> chosen;
  std::vector<std::size_t> picked;
  picked.reserve(num_negatives);
  for (std::size_t j = others - num_negatives; j < others; ++j) {
    std::size_t t = static_cast<std::size_t>(rng.bounded(j + 1));
    if (chosen.insert(t).second) {
      picked.push_back(t);
    } else {
      chosen.insert(j);
      picked.push_back(j);
    }
  }
  for (std::size_t idx : picked) candidates.push_back(nth_other(idx));
  return candidates;
}

StepLoss sequence_loss(Tape& tape, const Model& model, const Catalog& catalog,
                       const UserSequence& seq, Rng& rng) {
  std::size_t n = seq.size();
  StepLoss out;
  if (n < 2) return out;

  Tensor h = forward(tape, model, seq, seq.domains.back());
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::int64_t target = seq.items[i + 1];
    std::int64_t target_domain = seq.domains[i + 1];
    auto candidates = sample_candidates(catalog, target, target_domain,
                                        model.cfg.num_negatives, rng);
    if (candidates.size() < 2) {
      ++out.degenerate_steps;
      ++out.steps;
      continue;
    }
    Tensor h_i = tape.rows(h, {static_cast<std::int64_t>(i)}, {1});
    Tensor cand_emb = tape.rows(model.emb.items, candidates, {candidates.size()});
    Tensor logits = tape.matmul(h_i, tape.transpose(cand_emb, {1, 0}));  // (1 x c)
    Tensor log_probs = tape.log_softmax_rows(logits);
    Tensor step = tape.scale(tape.slice_last(log_probs, 0, 1), -1.0);
    out.loss_sum = out.loss_sum.defined() ? tape.add(out.loss_sum, step) : step;
    ++out.steps;
  }
  if (out.loss_sum.defined()) {
    out.loss_sum = tape.reshape(out.loss_sum, {1});
  } else if (out.steps > 0) {
    out.loss_sum = Tensor::scalar(0.0);
  }
  return out;
}

std::size_t rank_target(const Model& model, const Catalog& catalog,
                        std::span<const double> hidden, std::int64_t target_item,
                        std::int64_t target_domain) {
  const auto& pool = catalog.domain_items[static_cast<std::size_t>(target_domain)];
  std::size_t k = model.cfg.k;
  if (hidden.size() != k) throw ShapeError("rank_target: hidden size mismatch");
  auto table = model.emb.items.values();
  auto score = [&](std::int64_t item) {
    const double* row = table.data() + static_cast<std::size_t>(item) * k;
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += hidden[c] * row[c];
    return s;
  };
  double target_score = score(target_item);
  std::size_t rank = 1;
  for (std::int64_t item : pool) {
    if (item == target_item) continue;
    if (score(item) >= target_score) ++rank;  // pessimistic: ties beat the target
  }
  return rank;
}

std::vector<double> eval_hidden(const Model& model, const UserSequence& prefix,
                                std::int64_t query_domain) {
  Tape tape(false);
  Tensor h = forward(tape, model, prefix, query_domain);
  std::size_t n = prefix.size();
  std::size_t k = model.cfg.k;
  auto vals = h.values();
  return {vals.begin() + static_cast<std::ptrdiff_t>((n - 1) * k),
          vals.begin() + static_cast<std::ptrdiff_t>(n * k)};
}

namespace {

constexpr char kMagic[8] = {'C', 'R', 'E', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw DataError("checkpoint truncated: " + path);
  }
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
  std::uint64_t len = read_u64(in, path);
  std::string s(len, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(len))) {
    throw DataError("checkpoint truncated: " + path);
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const ModelConfig& c = ckpt.cfg;
  write_u64(out, c.k);
  write_u64(out, c.heads);
  write_u64(out, c.layers);
  write_u64(out, c.n_max);
  write_u64(out, c.num_negatives);
  write_u64(out, (c.use_tape ? 1u : 0u) | (c.use_ddsr ? 2u : 0u) |
                     (c.intra_domain_mask ? 4u : 0u) |
                     (c.ddsr_exclude_absent_domains ? 8u : 0u) | (c.use_residual ? 16u : 0u));
  write_u64(out, c.seed);
  write_u64(out, ckpt.num_items);
  write_u64(out, ckpt.num_domains);
  write_u64(out, ckpt.step);
  write_u64(out, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_string(out, name);
    write_u64(out, tensor.ndim());
    for (std::size_t d = 0; d < tensor.ndim(); ++d) write_u64(out, tensor.dim(d));
    auto vals = tensor.values();
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  Checkpoint ckpt;
  ModelConfig& c = ckpt.cfg;
  c.k = read_u64(in, path);
  c.heads = read_u64(in, path);
  c.layers = read_u64(in, path);
  c.n_max = read_u64(in, path);
  c.num_negatives = read_u64(in, path);
  std::uint64_t flags = read_u64(in, path);
  c.use_tape = flags & 1;
  c.use_ddsr = flags & 2;
  c.intra_domain_mask = flags & 4;
  c.ddsr_exclude_absent_domains = flags & 8;
  c.use_residual = flags & 16;
  c.seed = read_u64(in, path);
  ckpt.num_items = read_u64(in, path);
  ckpt.num_domains = read_u64(in, path);
  ckpt.step = read_u64(in, path);
  std::uint64_t count = read_u64(in, path);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name = read_string(in, path);
    std::uint64_t ndim = read_u64(in, path);
    Shape shape(ndim);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = read_u64(in, path);
      total *= d;
    }
    std::vector<double> vals(total);
    if (!in.read(reinterpret_cast<char*>(vals.data()),
                 static_cast<std::streamsize>(total * sizeof(double)))) {
      throw DataError("checkpoint truncated: " + path);
    }
    ckpt.tensors.emplace_back(name, Tensor::from_values(std::move(shape), std::move(vals), true));
  }
  return ckpt;
}

Checkpoint checkpoint_of(const Model& model, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.cfg = model.cfg;
  ckpt.num_items = model.num_items;
  ckpt.num_domains = model.num_domains;
  ckpt.step = step;
  ckpt.tensors = model.named_parameters();
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m = Model::init(ckpt.cfg, ckpt.num_items, ckpt.num_domains);
  auto params = m.named_parameters();
  for (auto& [name, dst] : params) {
    const Tensor* src = nullptr;
    for (const auto& [cname, ct] : ckpt.tensors) {
      if (cname == name) {
        src = &ct;
        break;
      }
    }
    if (!src) throw DataError("checkpoint missing tensor '" + name + "'");
    if (src->shape() != dst.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape()) +
                      ", model expects " + shape_str(dst.shape()));
    }
    auto out = Tensor(dst).mutable_values();
    auto in = src->values();
    std::copy(in.begin(), in.end(), out.begin());
  }
  return m;
}

}  // namespace crossrec
