#include <benchmark/benchmark.h>

#include <random>

#include "emoshift/kernels.hpp"
#include "emoshift/model.hpp"
#include "emoshift/optim.hpp"
#include "emoshift/rng.hpp"
#include "emoshift/synthdata.hpp"
#include "emoshift/training.hpp"

using namespace emoshift;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  auto rng = make_rng(seed, "bench");
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(standard_normal(rng));
  return v;
}

std::vector<SequenceLayout> batch_of(std::size_t n) {
  CorpusOptions o;
  o.train_scripts = (n + 19) / 20;
  const auto corpus = gen_corpus(EmotionSpec::make_default(), o);
  std::vector<SequenceLayout> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(corpus.train[i].layout());
  return out;
}

void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 64, n = static_cast<std::size_t>(state.range(1));
  const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n * 2));
}
BENCHMARK(BM_Gemm)->Args({1024, 64})->Args({1024, 192})->Args({1024, 256});

void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig c;
  auto p = TransformerParams<float>::init(c, 1);
  const auto batch = batch_of(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    for (auto* q : p.parameters()) q->zero_grad();
    Tape<float> tape;
    auto loss = compute_loss(tape, std::span<const SequenceLayout>(batch), p);
    tape.backward(loss);
    benchmark::DoNotOptimize(p.head_weight.grad.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_AdamWStep(benchmark::State& state) {
  ModelConfig c;
  auto p = TransformerParams<float>::init(c, 2);
  for (auto* q : p.parameters()) q->grad.fill(0.01f);
  AdamW<float> opt(AdamWConfig{}, p.parameters());
  for (auto _ : state) opt.step();
}
BENCHMARK(BM_AdamWStep)->Unit(benchmark::kMicrosecond);

void BM_Generate(benchmark::State& state) {
  ModelConfig c;
  auto p = TransformerParams<float>::init(c, 3);
  const auto cond = SequenceLayout::conditioning(0, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto bank = init_steer<float>(c, 0.001, SteerInit::kGaussian, 0.02, 4);
  GenerateOptions<float> opt;
  opt.max_len = 26;
  opt.bank = state.range(0) ? &bank : nullptr;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    opt.seed = seed++;
    benchmark::DoNotOptimize(generate(cond, p, opt));
  }
}
BENCHMARK(BM_Generate)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
