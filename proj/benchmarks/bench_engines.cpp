#include <benchmark/benchmark.h>

#include "bitadapt/meta.hpp"

namespace ba = bitadapt;

namespace {

ba::LabeledDataset glyphs(std::size_t classes, std::size_t per_class, std::size_t size) {
  ba::GlyphConfig g;
  g.num_classes = classes;
  g.samples_per_class = per_class;
  g.image_size = size;
  return ba::make_glyphs(g);
}

// One MEBQAT update (M branches over one batch of 64 28x28 images).
void BM_MebqatUpdate(benchmark::State& state) {
  auto ds = glyphs(10, 7, 28);
  ds.pixels.resize(64 * ds.image_numel());
  ds.labels.resize(64);
  ds.build_index();
  auto spec = ba::build_model(ba::ModelKind::conv8_reduced, 10, {1, 28, 28});
  ba::Rng init(1);
  auto theta = ba::init_params(spec, init);
  ba::MebqatConfig cfg;
  cfg.branches = static_cast<std::size_t>(state.range(0));
  cfg.tasks = ba::BitwidthTaskSet::uniform({ba::Bitwidth::bits(2), ba::Bitwidth::bits(4), ba::Bitwidth::fp()});
  cfg.batch_size = 64;
  cfg.logging.every = 0;
  ba::Optimizer opt({ba::OptimizerKind::adam, 1e-3});
  ba::EngineRngs rngs(1);
  std::size_t e = 0;
  for (auto _ : state) ba::run_mebqat_epoch(theta, spec, cfg, ds, opt, rngs, e++);
}
BENCHMARK(BM_MebqatUpdate)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_PnUpdate(benchmark::State& state) {
  auto ds = glyphs(20, 10, 16);
  const auto classes = ds.classes();
  auto spec = ba::build_model(ba::ModelKind::conv4_pn, 64, {1, 16, 16});
  ba::Rng init(2);
  auto theta = ba::init_params(spec, init);
  ba::PnConfig cfg;
  cfg.branches = 4;
  cfg.queries = 5;
  cfg.tasks = ba::BitwidthTaskSet::uniform({ba::Bitwidth::bits(2), ba::Bitwidth::bits(4), ba::Bitwidth::fp()});
  cfg.logging.every = 0;
  ba::Optimizer opt({ba::OptimizerKind::adam, 1e-3});
  ba::EngineRngs rngs(2);
  std::size_t e = 0;
  for (auto _ : state) ba::run_mebqat_pn_epoch(theta, spec, cfg, ds, classes, opt, rngs, e++);
}
BENCHMARK(BM_PnUpdate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
