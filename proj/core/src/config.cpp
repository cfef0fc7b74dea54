#include "crossrec/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace crossrec {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    out.push_back(static_cast<T>(parse_u64(key, tok)));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a non-empty list");
  return out;
}

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> table = {
      // model
      {"k", [](RunConfig& c, const std::string& v) { c.model.k = parse_u64("k", v); }},
      {"heads", [](RunConfig& c, const std::string& v) { c.model.heads = parse_u64("heads", v); }},
      {"layers", [](RunConfig& c, const std::string& v) { c.model.layers = parse_u64("layers", v); }},
      {"n_max", [](RunConfig& c, const std::string& v) { c.model.n_max = parse_u64("n_max", v); }},
      {"num_negatives",
       [](RunConfig& c, const std::string& v) { c.model.num_negatives = parse_u64("num_negatives", v); }},
      {"use_tape",
       [](RunConfig& c, const std::string& v) { c.model.use_tape = parse_bool("use_tape", v); }},
      {"use_ddsr",
       [](RunConfig& c, const std::string& v) { c.model.use_ddsr = parse_bool("use_ddsr", v); }},
      {"intra_domain_mask",
       [](RunConfig& c, const std::string& v) {
         c.model.intra_domain_mask = parse_bool("intra_domain_mask", v);
       }},
      {"ddsr_exclude_absent_domains",
       [](RunConfig& c, const std::string& v) {
         c.model.ddsr_exclude_absent_domains = parse_bool("ddsr_exclude_absent_domains", v);
       }},
      {"use_residual",
       [](RunConfig& c, const std::string& v) { c.model.use_residual = parse_bool("use_residual", v); }},
      // train
      {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_double("lr", v); }},
      {"beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = parse_double("beta1", v); }},
      {"beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = parse_double("beta2", v); }},
      {"adam_eps",
       [](RunConfig& c, const std::string& v) { c.train.adam_eps = parse_double("adam_eps", v); }},
      {"clip_norm",
       [](RunConfig& c, const std::string& v) { c.train.clip_norm = parse_double("clip_norm", v); }},
      {"batch_size",
       [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_u64("batch_size", v); }},
      {"steps", [](RunConfig& c, const std::string& v) { c.train.steps = parse_u64("steps", v); }},
      {"threads",
       [](RunConfig& c, const std::string& v) { c.train.threads = parse_u64("threads", v); }},
      // synthetic corpus
      {"num_users",
       [](RunConfig& c, const std::string& v) { c.synth.num_users = parse_u64("num_users", v); }},
      {"num_domains",
       [](RunConfig& c, const std::string& v) { c.synth.num_domains = parse_u64("num_domains", v); }},
      {"items_per_domain",
       [](RunConfig& c, const std::string& v) {
         c.synth.items_per_domain = parse_u64("items_per_domain", v);
       }},
      {"seq_len_min",
       [](RunConfig& c, const std::string& v) { c.synth.seq_len_min = parse_u64("seq_len_min", v); }},
      {"seq_len_max",
       [](RunConfig& c, const std::string& v) { c.synth.seq_len_max = parse_u64("seq_len_max", v); }},
      {"cross_affinity",
       [](RunConfig& c, const std::string& v) {
         c.synth.cross_affinity = parse_double("cross_affinity", v);
       }},
      // shared
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      {"min_count", [](RunConfig& c, const std::string& v) { c.min_count = parse_u64("min_count", v); }},
      {"min_len", [](RunConfig& c, const std::string& v) { c.min_len = parse_u64("min_len", v); }},
      // paths
      {"events_path", [](RunConfig& c, const std::string& v) { c.events_path = v; }},
      {"corpus_path", [](RunConfig& c, const std::string& v) { c.corpus_path = v; }},
      {"checkpoint_path", [](RunConfig& c, const std::string& v) { c.checkpoint_path = v; }},
      {"report_path", [](RunConfig& c, const std::string& v) { c.report_path = v; }},
      {"loss_log_path", [](RunConfig& c, const std::string& v) { c.loss_log_path = v; }},
      {"bench_report_path", [](RunConfig& c, const std::string& v) { c.bench_report_path = v; }},
      {"resume", [](RunConfig& c, const std::string& v) { c.resume = parse_bool("resume", v); }},
      // ablation matrix
      {"ablate_seeds",
       [](RunConfig& c, const std::string& v) {
         c.ablate_seeds = parse_list<std::uint64_t>("ablate_seeds", v);
       }},
      // bench
      {"bench_distribution",
       [](RunConfig& c, const std::string& v) { c.bench_distribution = v; }},
      {"bench_num_domains",
       [](RunConfig& c, const std::string& v) {
         c.bench_num_domains = parse_u64("bench_num_domains", v);
       }},
      {"bench_sizes",
       [](RunConfig& c, const std::string& v) {
         c.bench_sizes = parse_list<std::size_t>("bench_sizes", v);
       }},
      {"bench_repeats",
       [](RunConfig& c, const std::string& v) { c.bench_repeats = parse_u64("bench_repeats", v); }},
      // self-check fault hooks
      {"check_corrupt_mask",
       [](RunConfig& c, const std::string& v) {
         c.check_corrupt_mask = parse_bool("check_corrupt_mask", v);
       }},
      {"check_corrupt_grad",
       [](RunConfig& c, const std::string& v) {
         c.check_corrupt_grad = parse_bool("check_corrupt_grad", v);
       }},
  };
  return table;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, setter] : schema()) keys.push_back(key);
  return keys;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = schema().find(key);
  if (it == schema().end()) {
    throw ConfigError("config: unknown key '" + key + "'");
  }
  it->second(cfg, value);
}

void RunConfig::propagate_seed() {
  Rng root(seed);
  model.seed = root.child("model").seed();
  train.seed = root.child("train").seed();
  synth.seed = root.child("synth").seed();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (min_len < 2) throw ConfigError("config: min_len must be >= 2 for leave-one-out");
  if (bench_repeats < 1) throw ConfigError("config: bench_repeats must be >= 1");
  if (ablate_seeds.empty()) throw ConfigError("config: ablate_seeds must be non-empty");
}

RunConfig parse_config_text(const std::string& text, const RunConfig& defaults) {
  RunConfig cfg = defaults;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    auto end = line.find_last_not_of(" \t\r");
    line = line.substr(begin, end - begin + 1);
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value: '" +
                        line + "'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    apply_override(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path, const RunConfig& defaults) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), defaults);
}

}  // namespace crossrec
