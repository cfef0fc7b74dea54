#include <benchmark/benchmark.h>

#include "crossrec/attention.hpp"
#include "crossrec/ddsr.hpp"
#include "crossrec/model.hpp"
#include "crossrec/perf.hpp"
#include "crossrec/rng.hpp"
#include "crossrec/synthetic.hpp"

namespace {

using namespace crossrec;

constexpr std::size_t kDim = 64;
constexpr std::size_t kHeads = 4;
constexpr std::size_t kDomains = 4;

Tensor random_hidden(std::size_t n, Rng& rng) {
  std::vector<double> v(n * kDim);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values({n, kDim}, std::move(v));
}

void BM_DenseAttention(benchmark::State& state) {
  auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  LayerParams params = LayerParams::init(kDim, kHeads, 4 * kDim, rng);
  Tensor h = random_hidden(n, rng);
  MaskSpec mask = causal_mask(n);
  Tensor bias = alibi_bias(n, kHeads);
  for (auto _ : state) {
    Tape tape(false);
    SplitHeads qkvu = project_split(tape, h, params);
    Tensor out = attend(tape, qkvu, mask, bias, params);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DenseAttention)->RangeMultiplier(2)->Range(64, 512)->Complexity();

void BM_IntraMaskedAttention(benchmark::State& state) {
  auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  LayerParams params = LayerParams::init(kDim, kHeads, 4 * kDim, rng);
  Tensor h = random_hidden(n, rng);
  auto domains = make_domain_sequence(n, kDomains, "equal", 7);
  MaskSpec mask = build_mask(domains);
  Tensor bias = alibi_bias(n, kHeads);
  for (auto _ : state) {
    Tape tape(false);
    SplitHeads qkvu = project_split(tape, h, params);
    Tensor out = attend(tape, qkvu, mask, bias, params);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_IntraMaskedAttention)->RangeMultiplier(2)->Range(64, 512)->Complexity();

void BM_DomainStateLayer(benchmark::State& state) {
  auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  DdsrParams params = DdsrParams::init(kDim, rng);
  Tensor h = random_hidden(n, rng);
  auto domains = make_domain_sequence(n, kDomains, "equal", 7);
  for (auto _ : state) {
    Tape tape(false);
    auto states = build_domain_states(tape, h, domains, kDomains);
    Tensor c = ddsr_attend(tape, h, states, params);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DomainStateLayer)->RangeMultiplier(2)->Range(64, 512)->Complexity();

void BM_TrainStepForwardBackward(benchmark::State& state) {
  SynthConfig sc;
  sc.num_users = 8;
  sc.num_domains = kDomains;
  sc.items_per_domain = 50;
  sc.seq_len_min = 32;
  sc.seq_len_max = 32;
  sc.seed = 5;
  Corpus corpus = generate_synthetic(sc);
  ModelConfig cfg;
  cfg.k = kDim;
  cfg.heads = kHeads;
  cfg.layers = 2;
  cfg.n_max = 64;
  cfg.num_negatives = 16;
  Model model = Model::init(cfg, corpus.catalog.num_items(), corpus.catalog.num_domains());
  for (auto _ : state) {
    model.zero_grads();
    Tape tape;
    Rng rng(11);
    StepLoss sl = sequence_loss(tape, model, corpus.catalog, corpus.sequences[0], rng);
    tape.backward(sl.loss_sum);
    benchmark::DoNotOptimize(sl.loss_sum.value());
  }
}
BENCHMARK(BM_TrainStepForwardBackward);

}  // namespace

BENCHMARK_MAIN();
