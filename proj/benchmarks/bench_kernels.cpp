#include <benchmark/benchmark.h>

#include <vector>

#include "bitadapt/detail/gemm.hpp"
#include "bitadapt/ops.hpp"
#include "bitadapt/random.hpp"

namespace ba = bitadapt;

namespace {

ba::Tensor random_tensor(ba::Shape shape, std::uint64_t seed) {
  ba::Rng rng(seed);
  std::vector<float> v(ba::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return ba::Tensor::from_data(std::move(shape), std::move(v));
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    ba::detail::gemm(n, n, n, a.data().data(), b.data().data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForward(benchmark::State& state) {
  const auto ch = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({64, ch, 14, 14}, 3), w = random_tensor({ch, ch, 3, 3}, 4);
  ba::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ba::conv2d(x, w, ba::Conv2dOptions{1, 1}));
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto ch = static_cast<std::size_t>(state.range(0));
  auto x = random_tensor({64, ch, 14, 14}, 5), w = random_tensor({ch, ch, 3, 3}, 6);
  w.set_requires_grad(true);
  for (auto _ : state) {
    w.zero_grad();
    ba::sum(ba::conv2d(x, w, ba::Conv2dOptions{1, 1})).backward();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(32);

}  // namespace
