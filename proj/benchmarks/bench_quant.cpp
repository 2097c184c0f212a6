#include <benchmark/benchmark.h>

#include <vector>

#include "bitadapt/quant.hpp"

namespace ba = bitadapt;

namespace {

ba::Tensor weights(std::size_t n) {
  ba::Rng rng(7);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(0.1 * rng.normal());
  return ba::Tensor::from_data({n}, std::move(v));
}

void BM_QuantizeWeights(benchmark::State& state) {
  auto w = weights(1 << 16);
  const auto b = state.range(0) == 0 ? ba::Bitwidth::fp() : ba::Bitwidth::bits(static_cast<int>(state.range(0)));
  ba::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ba::quantize_weights(w, b));
  state.SetItemsProcessed(state.iterations() * (1 << 16));
}
BENCHMARK(BM_QuantizeWeights)->Arg(1)->Arg(2)->Arg(8)->Arg(0);

void BM_QuantizeActivations(benchmark::State& state) {
  auto a = weights(1 << 16);
  ba::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ba::quantize_activations(a, ba::Bitwidth::bits(4)));
  state.SetItemsProcessed(state.iterations() * (1 << 16));
}
BENCHMARK(BM_QuantizeActivations);

void BM_SampleTasks(benchmark::State& state) {
  auto ts = ba::BitwidthTaskSet::uniform({ba::Bitwidth::bits(1), ba::Bitwidth::bits(2), ba::Bitwidth::bits(4),
                                          ba::Bitwidth::bits(8), ba::Bitwidth::fp()},
                                         {ba::Bitwidth::bits(1)});
  ba::Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(ba::sample_bitwidth_tasks(ts, 4, rng, true));
}
BENCHMARK(BM_SampleTasks);

}  // namespace
