#include "crossrec/traineval.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "json.hpp"

#include "crossrec/rng.hpp"

namespace crossrec {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (lr < 0.0) throw ConfigError("train: learning rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train: moment coefficients must be in [0, 1)");
  }
}

TrainResult train(Model& model, const Catalog& catalog,
                  const std::vector<UserSequence>& sequences, const TrainConfig& cfg,
                  AdamState* state) {
  cfg.validate();
  if (sequences.empty()) throw DataError("train: no sequences");

  auto params = model.named_parameters();
  AdamState local;
  AdamState& adam = state ? *state : local;
  if (adam.m.empty()) {
    for (auto& [name, p] : params) {
      adam.m.emplace_back(p.size(), 0.0);
      adam.v.emplace_back(p.size(), 0.0);
    }
  }

  TrainResult result;
  Rng run_rng(cfg.seed);
  std::uint64_t first_step = adam.step;
  for (std::uint64_t step = first_step; step < first_step + cfg.steps; ++step) {
    Rng step_rng = run_rng.child(step);
    Rng batch_rng = step_rng.child("batch");
    Rng neg_rng = step_rng.child("negatives");

    // Partial Fisher-Yates: batch_size distinct sequences (or all of them).
    std::size_t take = std::min(cfg.batch_size, sequences.size());
    std::vector<std::size_t> order(sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + static_cast<std::size_t>(batch_rng.bounded(order.size() - i));
      std::swap(order[i], order[j]);
    }

    for (auto& [name, p] : params) Tensor(p).zero_grad();

    Tape tape;
    Tensor loss_sum;
    std::size_t total_steps = 0;
    for (std::size_t b = 0; b < take; ++b) {
      const UserSequence& seq = sequences[order[b]];
      StepLoss sl = sequence_loss(tape, model, catalog, seq, neg_rng);
      result.degenerate_steps += sl.degenerate_steps;
      total_steps += sl.steps;
      if (sl.loss_sum.defined() && sl.loss_sum.requires_grad()) {
        loss_sum = loss_sum.defined() ? tape.add(loss_sum, sl.loss_sum) : sl.loss_sum;
      }
    }
    if (total_steps == 0 || !loss_sum.defined()) {
      throw NumericError("train: step " + std::to_string(step) + " has no prediction steps");
    }
    Tensor loss = tape.scale(loss_sum, 1.0 / static_cast<double>(total_steps));
    double loss_value = loss.value();
    if (!std::isfinite(loss_value)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    }
    result.loss_curve.push_back(loss_value);
    tape.backward(loss);

    // Global-norm clip, then Adam with bias correction.
    double sq_norm = 0.0;
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (double g : p.grad()) sq_norm += g * g;
    }
    double clip_scale = 1.0;
    double norm = std::sqrt(sq_norm);
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;

    double t = static_cast<double>(step + 1);
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor p = params[pi].second;
      auto vals = p.mutable_values();
      auto& m = adam.m[pi];
      auto& v = adam.v[pi];
      std::span<const double> grads;
      std::vector<double> zero;
      if (p.has_grad()) {
        grads = p.grad();
      } else {
        zero.assign(p.size(), 0.0);
        grads = zero;
      }
      for (std::size_t i = 0; i < vals.size(); ++i) {
        double g = grads[i] * clip_scale;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        double m_hat = m[i] / bc1;
        double v_hat = v[i] / bc2;
        vals[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      }
    }
  }
  adam.step += cfg.steps;
  return result;
}

const std::vector<int>& MetricsReport::hr_cutoffs() {
  static const std::vector<int> ks{1, 10, 50, 100, 200};
  return ks;
}

const std::vector<int>& MetricsReport::ndcg_cutoffs() {
  static const std::vector<int> ks{10, 50, 100, 200};
  return ks;
}

void MetricsReport::validate() const {
  double prev = 0.0;
  for (int k : hr_cutoffs()) {
    auto it = hr.find(k);
    if (it == hr.end()) throw CheckError("metrics: missing HR@" + std::to_string(k));
    if (it->second < prev - 1e-12) throw CheckError("metrics: HR not monotone in k");
    if (it->second < 0.0 || it->second > 100.0) throw CheckError("metrics: HR out of range");
    prev = it->second;
  }
  prev = 0.0;
  for (int k : ndcg_cutoffs()) {
    auto it = ndcg.find(k);
    if (it == ndcg.end()) throw CheckError("metrics: missing NDCG@" + std::to_string(k));
    if (it->second < prev - 1e-12) throw CheckError("metrics: NDCG not monotone in k");
    if (it->second < 0.0 || it->second > 100.0) throw CheckError("metrics: NDCG out of range");
    prev = it->second;
    auto hr_it = hr.find(k);
    if (hr_it != hr.end() && it->second > hr_it->second + 1e-12) {
      throw CheckError("metrics: NDCG@" + std::to_string(k) + " exceeds HR@" + std::to_string(k));
    }
  }
  if (mrr < 0.0 || mrr > 100.0) throw CheckError("metrics: MRR out of range");
  for (int k : hr_cutoffs()) {
    if (mrr + 1e-9 < hr.at(k) / static_cast<double>(k)) {
      throw CheckError("metrics: MRR below HR@k / k bound");
    }
  }
}

MetricsReport metrics_from_ranks(const std::vector<std::size_t>& ranks) {
  MetricsReport report;
  report.num_users = ranks.size();
  double n = static_cast<double>(std::max<std::size_t>(ranks.size(), 1));
  for (int k : MetricsReport::hr_cutoffs()) {
    std::size_t hits = 0;
    for (std::size_t rank : ranks) {
      if (rank <= static_cast<std::size_t>(k)) ++hits;
    }
    report.hr[k] = 100.0 * static_cast<double>(hits) / n;
  }
  double rr = 0.0;
  for (std::size_t rank : ranks) rr += 1.0 / static_cast<double>(rank);
  report.mrr = 100.0 * rr / n;
  for (int k : MetricsReport::ndcg_cutoffs()) {
    double gain = 0.0;
    for (std::size_t rank : ranks) {
      if (rank <= static_cast<std::size_t>(k)) {
        gain += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
      }
    }
    report.ndcg[k] = 100.0 * gain / n;
  }
  return report;
}

MetricsReport evaluate(const Model& model, const Catalog& catalog, const LeaveOneOut& split,
                       std::size_t threads) {
  if (split.train.size() != split.targets.size()) {
    throw DataError("evaluate: prefix/target count mismatch");
  }
  std::vector<std::size_t> ranks(split.targets.size(), 0);
  auto eval_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t u = lo; u < hi; ++u) {
      const EvalTarget& target = split.targets[u];
      auto hidden = eval_hidden(model, split.train[u], target.target_domain);
      ranks[u] = rank_target(model, catalog, hidden, target.target_item, target.target_domain);
    }
  };
  std::size_t workers = std::max<std::size_t>(1, std::min(threads, split.targets.size()));
  if (workers == 1) {
    eval_range(0, split.targets.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (split.targets.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      std::size_t lo = w * chunk;
      std::size_t hi = std::min(split.targets.size(), lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(eval_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return metrics_from_ranks(ranks);
}

std::vector<VariantSpec> table_variants() {
  return {
      {"full", true, true, true},
      {"no-ddsr", true, false, true},
      {"no-tape", false, true, true},
      {"intra-only", false, false, true},
      {"dense-alibi", false, false, false},
  };
}

namespace {

MetricsReport aggregate(const std::vector<MetricsReport>& reports, bool stddev) {
  MetricsReport out;
  double n = static_cast<double>(reports.size());
  auto agg = [&](auto getter) {
    double mean = 0.0;
    for (const auto& r : reports) mean += getter(r);
    mean /= n;
    if (!stddev) return mean;
    double var = 0.0;
    for (const auto& r : reports) var += (getter(r) - mean) * (getter(r) - mean);
    return std::sqrt(var / n);
  };
  for (int k : MetricsReport::hr_cutoffs()) {
    out.hr[k] = agg([k](const MetricsReport& r) { return r.hr.at(k); });
  }
  out.mrr = agg([](const MetricsReport& r) { return r.mrr; });
  for (int k : MetricsReport::ndcg_cutoffs()) {
    out.ndcg[k] = agg([k](const MetricsReport& r) { return r.ndcg.at(k); });
  }
  out.num_users = reports.empty() ? 0 : reports.front().num_users;
  return out;
}

}  // namespace

std::vector<VariantResult> run_matrix(const Corpus& corpus, const ModelConfig& base_cfg,
                                      const TrainConfig& train_cfg,
                                      const std::vector<VariantSpec>& variants,
                                      const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("run_matrix: need at least one seed");
  LeaveOneOut split = split_leave_one_out(corpus.sequences);
  std::vector<VariantResult> results;
  for (const auto& variant : variants) {
    VariantResult row;
    row.variant = variant;
    row.seeds = seeds;
    for (std::uint64_t seed : seeds) {
      ModelConfig cfg = base_cfg;
      cfg.use_tape = variant.use_tape;
      cfg.use_ddsr = variant.use_ddsr;
      cfg.intra_domain_mask = variant.intra_domain_mask;
      cfg.seed = seed;
      TrainConfig tc = train_cfg;
      tc.seed = seed;
      Model model = Model::init(cfg, corpus.catalog.num_items(), corpus.catalog.num_domains());
      train(model, corpus.catalog, split.train, tc);
      MetricsReport report = evaluate(model, corpus.catalog, split, train_cfg.threads);
      report.validate();
      row.per_seed.push_back(std::move(report));
    }
    row.mean = aggregate(row.per_seed, false);
    row.stddev = aggregate(row.per_seed, true);
    results.push_back(std::move(row));
  }
  return results;
}

namespace {

ordered_json metrics_json(const MetricsReport& r) {
  ordered_json j;
  ordered_json hr;
  for (int k : MetricsReport::hr_cutoffs()) hr[std::to_string(k)] = r.hr.at(k);
  j["hr"] = hr;
  j["mrr"] = r.mrr;
  ordered_json nd;
  for (int k : MetricsReport::ndcg_cutoffs()) nd[std::to_string(k)] = r.ndcg.at(k);
  j["ndcg"] = nd;
  j["num_users"] = r.num_users;
  return j;
}

MetricsReport metrics_from(const ordered_json& j) {
  MetricsReport r;
  for (auto& [key, value] : j.at("hr").items()) r.hr[std::stoi(key)] = value.get<double>();
  r.mrr = j.at("mrr").get<double>();
  for (auto& [key, value] : j.at("ndcg").items()) r.ndcg[std::stoi(key)] = value.get<double>();
  r.num_users = j.at("num_users").get<std::size_t>();
  return r;
}

}  // namespace

std::string metrics_to_json(const MetricsReport& report) {
  return metrics_json(report).dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string& text) {
  return metrics_from(ordered_json::parse(text));
}

std::string matrix_to_json(const std::vector<VariantResult>& results) {
  ordered_json arr = ordered_json::array();
  for (const auto& row : results) {
    ordered_json j;
    j["variant"] = row.variant.name;
    j["flags"] = {{"use_tape", row.variant.use_tape},
                  {"use_ddsr", row.variant.use_ddsr},
                  {"intra_domain_mask", row.variant.intra_domain_mask}};
    j["seeds"] = row.seeds;
    ordered_json per_seed = ordered_json::array();
    for (const auto& r : row.per_seed) per_seed.push_back(metrics_json(r));
    j["per_seed"] = per_seed;
    j["mean"] = metrics_json(row.mean);
    j["stddev"] = metrics_json(row.stddev);
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

std::vector<VariantResult> matrix_from_json(const std::string& text) {
  ordered_json arr = ordered_json::parse(text);
  std::vector<VariantResult> results;
  for (const auto& j : arr) {
    VariantResult row;
    row.variant.name = j.at("variant").get<std::string>();
    row.variant.use_tape = j.at("flags").at("use_tape").get<bool>();
    row.variant.use_ddsr = j.at("flags").at("use_ddsr").get<bool>();
    row.variant.intra_domain_mask = j.at("flags").at("intra_domain_mask").get<bool>();
    row.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& r : j.at("per_seed")) row.per_seed.push_back(metrics_from(r));
    row.mean = metrics_from(j.at("mean"));
    row.stddev = metrics_from(j.at("stddev"));
    results.push_back(std::move(row));
  }
  return results;
}

}  // namespace crossrec
