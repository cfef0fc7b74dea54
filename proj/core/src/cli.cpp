#include "crossrec/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>

#include "CLI11.hpp"

#include "crossrec/grad_check.hpp"
#include "crossrec/perf.hpp"
#include "crossrec/rng.hpp"

namespace crossrec {

namespace {

void write_loss_log(const std::string& path, const std::vector<double>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss log: " + path);
  char line[64];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu\t%.17g\n", i, curve[i]);
    out << line;
  }
}

Checkpoint training_checkpoint(const Model& model, const AdamState& adam, std::uint64_t step) {
  Checkpoint ckpt = checkpoint_of(model, step);
  auto params = model.named_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.tensors.emplace_back("adam_m/" + params[i].first,
                              Tensor::from_values(params[i].second.shape(),
                                                  std::vector<double>(adam.m[i])));
    ckpt.tensors.emplace_back("adam_v/" + params[i].first,
                              Tensor::from_values(params[i].second.shape(),
                                                  std::vector<double>(adam.v[i])));
  }
  return ckpt;
}

AdamState adam_from_checkpoint(const Checkpoint& ckpt, const Model& model) {
  AdamState adam;
  adam.step = ckpt.step;
  auto params = model.named_parameters();
  for (auto& [name, p] : params) {
    const Tensor* m = nullptr;
    const Tensor* v = nullptr;
    for (const auto& [cname, ct] : ckpt.tensors) {
      if (cname == "adam_m/" + name) m = &ct;
      if (cname == "adam_v/" + name) v = &ct;
    }
    if (!m || !v) {
      // Checkpoint without optimizer state: start moments fresh.
      adam.m.emplace_back(p.size(), 0.0);
      adam.v.emplace_back(p.size(), 0.0);
      continue;
    }
    adam.m.emplace_back(m->values().begin(), m->values().end());
    adam.v.emplace_back(v->values().begin(), v->values().end());
  }
  return adam;
}

Corpus load_corpus_checked(const RunConfig& cfg) {
  Corpus corpus = read_corpus_file(cfg.corpus_path);
  check_corpus(corpus);
  return corpus;
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg) {
  auto events = synthetic_events(cfg.synth);
  write_events_file(cfg.events_path, events);
  std::cout << "wrote " << events.size() << " events to " << cfg.events_path << "\n";
  return kExitOk;
}

int cmd_preprocess(const RunConfig& cfg) {
  auto events = ingest(cfg.events_path);
  Corpus corpus = preprocess(events, cfg.min_count, cfg.min_len, cfg.model.n_max);
  check_corpus(corpus);
  write_corpus_file(cfg.corpus_path, corpus);
  // delta is defined per sequence; report the corpus-wide worst case too.
  double max_delta = 0.0;
  for (const auto& seq : corpus.sequences) {
    max_delta = std::max(
        max_delta, count_attention_pairs(seq.domains, corpus.catalog.num_domains()).delta);
  }
  std::cout << "wrote " << corpus.sequences.size() << " sequences, "
            << corpus.catalog.num_items() << " items, " << corpus.catalog.num_domains()
            << " domains to " << cfg.corpus_path << "\n"
            << "max per-sequence delta (largest domain share): " << max_delta << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  Corpus corpus = load_corpus_checked(cfg);
  LeaveOneOut split = split_leave_one_out(corpus.sequences);

  Model model;
  AdamState adam;
  if (cfg.resume) {
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path);
    if (ckpt.num_items != corpus.catalog.num_items() ||
        ckpt.num_domains != corpus.catalog.num_domains()) {
      throw DataError("checkpoint catalog (" + std::to_string(ckpt.num_items) + " items, " +
                      std::to_string(ckpt.num_domains) + " domains) does not match corpus (" +
                      std::to_string(corpus.catalog.num_items()) + " items, " +
                      std::to_string(corpus.catalog.num_domains()) + " domains)");
    }
    model = model_from_checkpoint(ckpt);
    adam = adam_from_checkpoint(ckpt, model);
  } else {
    model = Model::init(cfg.model, corpus.catalog.num_items(), corpus.catalog.num_domains());
  }

  TrainResult result = train(model, corpus.catalog, split.train, cfg.train, &adam);
  save_checkpoint(cfg.checkpoint_path, training_checkpoint(model, adam, adam.step));
  write_loss_log(cfg.loss_log_path, result.loss_curve);
  std::cout << "trained " << result.loss_curve.size() << " steps, final loss "
            << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << ", checkpoint "
            << cfg.checkpoint_path << "\n";
  if (result.degenerate_steps > 0) {
    std::cout << "warning: " << result.degenerate_steps
              << " prediction steps had single-item domains (loss contribution 0)\n";
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  Corpus corpus = load_corpus_checked(cfg);
  Checkpoint ckpt = load_checkpoint(cfg.checkpoint_path);
  if (ckpt.num_items != corpus.catalog.num_items() ||
      ckpt.num_domains != corpus.catalog.num_domains()) {
    throw DataError("checkpoint catalog does not match corpus: checkpoint has " +
                    std::to_string(ckpt.num_items) + " items / " +
                    std::to_string(ckpt.num_domains) + " domains, corpus has " +
                    std::to_string(corpus.catalog.num_items()) + " / " +
                    std::to_string(corpus.catalog.num_domains()));
  }
  Model model = model_from_checkpoint(ckpt);
  LeaveOneOut split = split_leave_one_out(corpus.sequences);
  MetricsReport report = evaluate(model, corpus.catalog, split, cfg.train.threads);
  report.validate();
  std::ofstream out(cfg.report_path);
  if (!out) throw DataError("cannot write report: " + cfg.report_path);
  out << metrics_to_json(report);
  std::cout << metrics_to_json(report);
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg) {
  Corpus corpus = load_corpus_checked(cfg);
  auto results = run_matrix(corpus, cfg.model, cfg.train, table_variants(), cfg.ablate_seeds);
  std::string text = matrix_to_json(results);
  std::ofstream out(cfg.report_path);
  if (!out) throw DataError("cannot write report: " + cfg.report_path);
  out << text;

  std::printf("%-12s %10s %10s %10s %10s\n", "variant", "HR@1", "HR@10", "HR@100", "MRR");
  for (const auto& row : results) {
    std::printf("%-12s %5.2f(%.2f) %5.2f(%.2f) %5.2f(%.2f) %5.2f(%.2f)\n",
                row.variant.name.c_str(), row.mean.hr.at(1), row.stddev.hr.at(1),
                row.mean.hr.at(10), row.stddev.hr.at(10), row.mean.hr.at(100),
                row.stddev.hr.at(100), row.mean.mrr, row.stddev.mrr);
  }
  std::cout << "full report written to " << cfg.report_path << "\n";
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg) {
  BenchConfig bc;
  bc.distribution = cfg.bench_distribution;
  bc.num_domains = cfg.bench_num_domains;
  bc.sizes = cfg.bench_sizes;
  bc.repeats = cfg.bench_repeats;
  bc.k = cfg.model.k;
  bc.heads = cfg.model.heads;
  bc.seed = cfg.seed;
  auto rows = bench(bc);
  std::string table = format_bench_table(rows);
  std::ofstream out(cfg.bench_report_path);
  if (!out) throw DataError("cannot write bench report: " + cfg.bench_report_path);
  out << table;
  std::cout << table;
  return kExitOk;
}

namespace {

struct CheckContext {
  int failures = 0;

  void run(const std::string& name, const std::function<void()>& body) {
    try {
      body();
      std::cout << "[ok]   " << name << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "[FAIL] " << name << ": " << e.what() << "\n";
    }
  }
};

ModelConfig check_model_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.k = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.n_max = 12;
  cfg.num_negatives = 4;
  cfg.seed = seed;
  return cfg;
}

Corpus check_corpus_fixture(std::uint64_t seed) {
  SynthConfig sc;
  sc.num_users = 6;
  sc.num_domains = 3;
  sc.items_per_domain = 5;
  sc.seq_len_min = 6;
  sc.seq_len_max = 10;
  sc.cross_affinity = 0.5;
  sc.seed = seed;
  return generate_synthetic(sc);
}

}  // namespace

int cmd_check(const RunConfig& cfg) {
  CheckContext ctx;
  Rng root(cfg.seed);
  Corpus corpus = check_corpus_fixture(root.child("corpus").seed());
  ModelConfig mc = check_model_config(root.child("model").seed());
  Model model = Model::init(mc, corpus.catalog.num_items(), corpus.catalog.num_domains());

  ctx.run("gradients: primitive ops", [&] {
    Rng rng = root.child("ops");
    std::vector<double> xv(12), yv(12);
    for (auto& v : xv) v = rng.uniform(-1.0, 1.0);
    for (auto& v : yv) v = rng.uniform(-1.0, 1.0);
    Tensor x = Tensor::from_values({3, 4}, xv, true);
    Tensor y = Tensor::from_values({3, 4}, yv, true);
    auto f = [&](Tape& t) {
      Tensor z = t.layer_norm(t.matmul(t.softmax_rows(x), t.transpose(y, {1, 0})));
      return t.scale(t.sum(t.mul(z, t.silu(z))), 1.0 / 9.0);
    };
    auto rep = grad_check(f, {{"x", x}, {"y", y}});
    if (rep.max_rel_err > 1e-4) {
      throw CheckError("primitive-op gradient check failed: max relative error " +
                       std::to_string(rep.max_rel_err) + " at " + rep.worst_param);
    }
  });

  ctx.run("gradients: full model NLL", [&] {
    std::vector<UserSequence> batch(corpus.sequences.begin(),
                                    corpus.sequences.begin() + 2);
    auto params = model.named_parameters();
    auto f = [&](Tape& tape) {
      Rng rng(987);
      Tensor total;
      std::size_t steps = 0;
      for (const auto& seq : batch) {
        StepLoss sl = sequence_loss(tape, model, corpus.catalog, seq, rng);
        total = total.defined() ? tape.add(total, sl.loss_sum) : sl.loss_sum;
        steps += sl.steps;
      }
      Tensor loss = tape.scale(total, 1.0 / static_cast<double>(steps));
      if (cfg.check_corrupt_grad && tape.recording()) {
        // Fault hook: the recorded graph differs from the value path by a
        // constant factor, so every tape gradient comes out mis-scaled.
        loss = tape.scale(loss, 1.015);
      }
      return loss;
    };
    auto rep = grad_check(f, params);
    if (rep.max_rel_err > 1e-4) {
      throw CheckError("full-model gradient check failed: max relative error " +
                       std::to_string(rep.max_rel_err) + " at " + rep.worst_param);
    }
  });

  ctx.run("mask: zero cross-domain leakage", [&] {
    Rng rng = root.child("leak");
    for (int trial = 0; trial < 20; ++trial) {
      std::size_t n = 4 + static_cast<std::size_t>(rng.bounded(8));
      std::vector<std::int64_t> domains(n);
      for (auto& d : domains) {
        d = static_cast<std::int64_t>(rng.bounded(corpus.catalog.num_domains()));
      }
      MaskSpec mask = build_mask(domains);
      if (cfg.check_corrupt_mask && trial == 7) {
        // Fault hook: wrongly allow the first cross-domain causal pair.
        [&] {
          for (std::size_t i = 1; i < n; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
              if (domains[i] != domains[j]) {
                mask.allow[i * n + j] = 1;
                return;
              }
            }
          }
        }();
      }
      std::vector<double> hv(n * mc.k);
      for (auto& v : hv) v = rng.uniform(-1.0, 1.0);
      Tensor h = Tensor::from_values({n, mc.k}, std::move(hv));
      Tape tape;
      SplitHeads qkvu = project_split(tape, h, model.layers[0]);
      Tensor weights;
      attend(tape, qkvu, mask, alibi_bias(n, mc.heads), model.layers[0], nullptr, &weights);
      for (std::size_t head = 0; head < mc.heads; ++head) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if ((domains[i] != domains[j] || j > i) && weights.at({head, i, j}) != 0.0) {
              throw CheckError("cross-domain attention weight " +
                               std::to_string(weights.at({head, i, j})) + " at (" +
                               std::to_string(i) + ", " + std::to_string(j) + ") is not zero");
            }
          }
        }
      }
    }
  });

  ctx.run("phi: sweep equals brute force", [&] {
    Rng rng = root.child("phi");
    for (int trial = 0; trial < 200; ++trial) {
      std::size_t n = 1 + static_cast<std::size_t>(rng.bounded(50));
      std::size_t num_domains = 1 + static_cast<std::size_t>(rng.bounded(5));
      std::vector<std::int64_t> domains(n);
      for (auto& d : domains) d = static_cast<std::int64_t>(rng.bounded(num_domains));
      std::vector<double> hv(n * 2);
      for (auto& v : hv) v = rng.uniform(-1.0, 1.0);
      Tensor h = Tensor::from_values({n, 2}, std::move(hv));
      Tape tape;
      auto states = build_domain_states(tape, h, domains, num_domains);
      for (std::size_t d = 0; d < num_domains; ++d) {
        for (std::size_t i = 0; i < n; ++i) {
          auto pos = phi(domains, static_cast<std::int64_t>(d), i);
          if (states.is_present(d, i) != pos.has_value()) {
            throw CheckError("phi presence mismatch at domain " + std::to_string(d) +
                             " position " + std::to_string(i));
          }
          for (std::size_t c = 0; c < 2; ++c) {
            double expected = pos ? h.at({*pos, c}) : 0.0;
            if (states.states.at({d, i, c}) != expected) {
              throw CheckError("phi state mismatch at domain " + std::to_string(d) +
                               " position " + std::to_string(i));
            }
          }
        }
      }
    }
  });

  ctx.run("causality: suffix perturbations leave step logits bit-identical", [&] {
    Rng rng = root.child("causal");
    for (int trial = 0; trial < 10; ++trial) {
      const UserSequence& seq = corpus.sequences[rng.bounded(corpus.sequences.size())];
      std::size_t n = seq.size();
      std::size_t i = 1 + static_cast<std::size_t>(rng.bounded(n - 2));
      auto hidden_at = [&](const UserSequence& s) {
        Tape tape(false);
        Tensor h = forward(tape, model, s, s.domains.back());
        return std::vector<double>(
            h.values().begin() + static_cast<std::ptrdiff_t>(i * mc.k),
            h.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * mc.k));
      };
      auto base = hidden_at(seq);
      UserSequence perturbed = seq;
      for (std::size_t j = i + 1; j < n; ++j) {
        std::int64_t d = perturbed.domains[j];
        const auto& pool = corpus.catalog.domain_items[static_cast<std::size_t>(d)];
        perturbed.items[j] = pool[rng.bounded(pool.size())];
      }
      for (std::size_t j = i + 2; j < n; ++j) {
        auto nd = static_cast<std::int64_t>(rng.bounded(corpus.catalog.num_domains()));
        perturbed.domains[j] = nd;
        const auto& pool = corpus.catalog.domain_items[static_cast<std::size_t>(nd)];
        perturbed.items[j] = pool[rng.bounded(pool.size())];
      }
      auto changed = hidden_at(perturbed);
      if (std::memcmp(base.data(), changed.data(), base.size() * sizeof(double)) != 0) {
        throw CheckError("hidden state at step " + std::to_string(i) +
                         " changed after perturbing positions > " + std::to_string(i));
      }
    }
  });

  ctx.run("accounting: measured score ops equal the closed form", [&] {
    for (const auto& seq : corpus.sequences) {
      instrumented_forward(model, seq, seq.domains.back());  // throws on mismatch
    }
  });

  if (ctx.failures > 0) {
    std::cout << ctx.failures << " check(s) failed\n";
    return kExitCheckFail;
  }
  std::cout << "all checks passed\n";
  return kExitOk;
}

namespace {

struct CliOptions {
  std::string config_path;
  std::string out;
  bool has_seed = false;
  std::uint64_t seed = 0;
  bool no_tape = false;
  bool no_ddsr = false;
  bool full_attention = false;
};

RunConfig build_config(const CliOptions& opts, const std::vector<std::string>& extras,
                       const std::string& subcommand) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config_file(opts.config_path, cfg);
  for (const auto& extra : extras) {
    std::string token = extra;
    if (token.rfind("--", 0) != 0) {
      throw ConfigError("unrecognized argument '" + token + "' (expected --key=value)");
    }
    token.erase(0, 2);
    std::size_t eq = token.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '--" + token + "' must be --key=value");
    }
    apply_override(cfg, token.substr(0, eq), token.substr(eq + 1));
  }
  if (opts.has_seed) cfg.seed = opts.seed;
  if (opts.no_tape) cfg.model.use_tape = false;
  if (opts.no_ddsr) cfg.model.use_ddsr = false;
  if (opts.full_attention) cfg.model.intra_domain_mask = false;
  if (!opts.out.empty()) {
    if (subcommand == "gen-data") {
      cfg.events_path = opts.out;
    } else if (subcommand == "preprocess") {
      cfg.corpus_path = opts.out;
    } else if (subcommand == "train") {
      cfg.checkpoint_path = opts.out;
    } else if (subcommand == "bench") {
      cfg.bench_report_path = opts.out;
    } else {
      cfg.report_path = opts.out;
    }
  }
  cfg.propagate_seed();
  cfg.validate();
  return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"cross-domain sequential recommender with intra-domain masked attention"};
  app.require_subcommand(1);

  CliOptions opts;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate a synthetic event log"},
      {"preprocess", "ingest an event log and write the preprocessed corpus"},
      {"train", "train a model on a preprocessed corpus"},
      {"eval", "leave-one-out evaluation of a checkpoint"},
      {"ablate", "run the ablation matrix over seeds"},
      {"bench", "attention cost benchmark (dense vs intra-masked)"},
      {"check", "gradient, mask, causality and accounting self-checks"},
  };
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", opts.config_path, "key=value configuration file");
    sub->add_option("--seed", opts.seed, "run seed")->each([&](const std::string&) {
      opts.has_seed = true;
    });
    sub->add_option("--out", opts.out, "primary output path of this command");
    sub->add_flag("--no-tape", opts.no_tape, "disable transition-aware positional embeddings");
    sub->add_flag("--no-ddsr", opts.no_ddsr, "disable the domain-state layer");
    sub->add_flag("--full-attention", opts.full_attention,
                  "causal-only mask (dense baseline)");
    sub->allow_extras();
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    auto* sub = app.get_subcommands().front();
    RunConfig cfg = build_config(opts, sub->remaining(), sub->get_name());
    const std::string& name = sub->get_name();
    if (name == "gen-data") return cmd_gen_data(cfg);
    if (name == "preprocess") return cmd_preprocess(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "eval") return cmd_eval(cfg);
    if (name == "ablate") return cmd_ablate(cfg);
    if (name == "bench") return cmd_bench(cfg);
    if (name == "check") return cmd_check(cfg);
    throw ConfigError("unknown subcommand: " + name);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CheckError& e) {
    std::cerr << "check failure: " << e.what() << "\n";
    return kExitCheckFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace crossrec
