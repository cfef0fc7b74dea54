#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossrec/model.hpp"
#include "crossrec/synthetic.hpp"
#include "crossrec/traineval.hpp"

namespace crossrec {

// Run configuration merged from a key=value file plus command-line
// overrides (overrides win). Every key is validated against the schema;
// unknown keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  std::uint64_t seed = 1;
  std::size_t min_count = 5;
  std::size_t min_len = 10;

  std::string events_path = "events.tsv";
  std::string corpus_path = "corpus.txt";
  std::string checkpoint_path = "model.ckpt";
  std::string report_path = "metrics.json";
  std::string loss_log_path = "loss.log";
  std::string bench_report_path = "bench.tsv";

  bool resume = false;

  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};

  std::string bench_distribution = "equal";
  std::size_t bench_num_domains = 4;
  std::vector<std::size_t> bench_sizes{64, 128, 256};
  std::size_t bench_repeats = 5;

  // Negative-control hooks for the self-check command: each injects one
  // deliberate fault so the corresponding check must fail.
  bool check_corrupt_mask = false;
  bool check_corrupt_grad = false;

  // The run seed fans out to every component.
  void propagate_seed();
  void validate() const;
};

// Parses `key=value` lines; '#' starts a comment. Throws ConfigError on
// unknown keys or malformed values.
RunConfig parse_config_text(const std::string& text, const RunConfig& defaults = {});
RunConfig load_config_file(const std::string& path, const RunConfig& defaults = {});
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

std::vector<std::string> config_keys();

}  // namespace crossrec
