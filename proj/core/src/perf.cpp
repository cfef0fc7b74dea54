#include "crossrec/perf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "crossrec/rng.hpp"

namespace crossrec {

AttentionCostReport count_attention_pairs(const std::vector<std::int64_t>& domains,
                                          std::size_t num_domains) {
  if (domains.empty()) throw DataError("count_attention_pairs: empty domain sequence");
  std::int64_t max_domain = 0;
  for (std::int64_t d : domains) {
    if (d < 0) throw DataError("count_attention_pairs: negative domain index");
    max_domain = std::max(max_domain, d);
  }
  std::size_t span = std::max(num_domains, static_cast<std::size_t>(max_domain) + 1);

  AttentionCostReport report;
  report.domain_sizes.assign(span, 0);
  for (std::int64_t d : domains) ++report.domain_sizes[static_cast<std::size_t>(d)];
  report.total = domains.size();

  std::size_t distinct = 0;
  std::size_t largest = 0;
  for (std::size_t s : report.domain_sizes) {
    if (s > 0) ++distinct;
    largest = std::max(largest, s);
    report.intra_causal_pairs += static_cast<std::uint64_t>(s) * (s + 1) / 2;
    report.sum_squares += static_cast<std::uint64_t>(s) * s;
  }
  report.num_domains = num_domains > 0 ? num_domains : distinct;

  auto total = static_cast<std::uint64_t>(report.total);
  report.dense_causal_pairs = total * (total + 1) / 2;
  report.ddsr_pairs = static_cast<std::uint64_t>(report.num_domains) * report.dense_causal_pairs;
  report.delta = static_cast<double>(largest) / static_cast<double>(report.total);
  report.ratio = static_cast<double>(report.intra_causal_pairs) /
                 static_cast<double>(report.dense_causal_pairs);
  report.quad_ratio = static_cast<double>(report.sum_squares) /
                      (static_cast<double>(total) * static_cast<double>(total));
  return report;
}

InstrumentedResult instrumented_forward(const Model& model, const UserSequence& seq,
                                        std::int64_t query_domain) {
  Tape tape(false);
  tape.reset_score_ops();
  InstrumentedResult result;
  result.h_final = forward(tape, model, seq, query_domain);
  result.intra_score_ops = tape.score_ops(ScoreKind::IntraAttention);
  result.ddsr_score_ops = tape.score_ops(ScoreKind::Ddsr);
  result.expected = count_attention_pairs(seq.domains, model.num_domains);

  std::uint64_t per_layer = model.cfg.intra_domain_mask ? result.expected.intra_causal_pairs
                                                        : result.expected.dense_causal_pairs;
  std::uint64_t expected_intra = per_layer * model.cfg.heads * model.cfg.layers;
  if (result.intra_score_ops != expected_intra) {
    throw CheckError("attention op-count mismatch: measured " +
                     std::to_string(result.intra_score_ops) + ", expected " +
                     std::to_string(expected_intra));
  }
  std::uint64_t expected_ddsr =
      model.cfg.use_ddsr ? result.expected.ddsr_pairs * model.cfg.layers : 0;
  if (result.ddsr_score_ops != expected_ddsr) {
    throw CheckError("domain-state op-count mismatch: measured " +
                     std::to_string(result.ddsr_score_ops) + ", expected " +
                     std::to_string(expected_ddsr));
  }
  return result;
}

std::vector<std::int64_t> make_domain_sequence(std::size_t total, std::size_t num_domains,
                                               const std::string& distribution,
                                               std::uint64_t seed) {
  if (total == 0 || num_domains == 0) {
    throw ConfigError("make_domain_sequence: need total and num_domains >= 1");
  }
  std::vector<double> weights;
  if (distribution == "equal") {
    weights.assign(num_domains, 1.0 / static_cast<double>(num_domains));
  } else {
    std::stringstream ss(distribution);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        weights.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("make_domain_sequence: bad proportion '" + tok + "'");
      }
    }
    if (weights.size() != num_domains) {
      throw ConfigError("make_domain_sequence: " + std::to_string(weights.size()) +
                        " proportions for " + std::to_string(num_domains) + " domains");
    }
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ConfigError("make_domain_sequence: negative proportion");
      sum += w;
    }
    if (sum <= 0.0) throw ConfigError("make_domain_sequence: proportions sum to zero");
    for (double& w : weights) w /= sum;
  }

  // Largest-remainder apportionment, then a seeded shuffle.
  std::vector<std::size_t> counts(num_domains, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t d = 0; d < num_domains; ++d) {
    double exact = weights[d] * static_cast<double>(total);
    counts[d] = static_cast<std::size_t>(exact);
    assigned += counts[d];
    remainders.emplace_back(exact - std::floor(exact), d);
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) {
    ++counts[remainders[i % remainders.size()].second];
  }

  std::vector<std::int64_t> domains;
  domains.reserve(total);
  for (std::size_t d = 0; d < num_domains; ++d) {
    domains.insert(domains.end(), counts[d], static_cast<std::int64_t>(d));
  }
  Rng rng(seed);
  for (std::size_t i = domains.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.bounded(i));
    std::swap(domains[i - 1], domains[j]);
  }
  return domains;
}

namespace {

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double time_attention(const LayerParams& params, const Tensor& h, const MaskSpec& mask,
                      const Tensor& bias, std::size_t repeats) {
  std::vector<double> samples;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto start = std::chrono::steady_clock::now();
    Tape tape(false);
    SplitHeads qkvu = project_split(tape, h, params);
    Tensor out = attend(tape, qkvu, mask, bias, params);
    auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return median(std::move(samples));
}

}  // namespace

std::vector<BenchRow> bench(const BenchConfig& cfg) {
  if (cfg.repeats < 1) throw ConfigError("bench: repeats must be >= 1");
  std::vector<BenchRow> rows;
  Rng rng(cfg.seed);
  Rng init_rng = rng.child("params");
  LayerParams params = LayerParams::init(cfg.k, cfg.heads, 4 * cfg.k, init_rng);
  for (std::size_t total : cfg.sizes) {
    auto domains = make_domain_sequence(total, cfg.num_domains, cfg.distribution,
                                        rng.child(total).seed());
    AttentionCostReport cost = count_attention_pairs(domains, cfg.num_domains);

    std::vector<double> values(total * cfg.k);
    Rng data_rng = rng.child("data");
    for (auto& v : values) v = data_rng.uniform(-1.0, 1.0);
    Tensor h = Tensor::from_values({total, cfg.k}, std::move(values));
    Tensor bias = alibi_bias(total, cfg.heads);
    MaskSpec intra = build_mask(domains);
    MaskSpec dense = causal_mask(total);

    BenchRow row;
    row.total = total;
    row.num_domains = cfg.num_domains;
    row.distribution = cfg.distribution;
    row.dense_pairs = cost.dense_causal_pairs;
    row.intra_pairs = cost.intra_causal_pairs;
    row.ratio = cost.ratio;
    row.delta = cost.delta;
    row.median_ms_dense = time_attention(params, h, dense, bias, cfg.repeats);
    row.median_ms_intra = time_attention(params, h, intra, bias, cfg.repeats);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "S\tD\tdistribution\tdense_pairs\tintra_pairs\tratio\tdelta\t"
         "median_ms_dense\tmedian_ms_intra\n";
  for (const auto& row : rows) {
    out << row.total << '\t' << row.num_domains << '\t' << row.distribution << '\t'
        << row.dense_pairs << '\t' << row.intra_pairs << '\t' << row.ratio << '\t' << row.delta
        << '\t' << row.median_ms_dense << '\t' << row.median_ms_intra << '\n';
  }
  return out.str();
}

}  // namespace crossrec
