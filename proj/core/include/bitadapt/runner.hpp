#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bitadapt/checkpoint.hpp"
#include "bitadapt/config.hpp"
#include "bitadapt/cost.hpp"
#include "bitadapt/data.hpp"
#include "bitadapt/meta.hpp"

namespace bitadapt {

struct Datasets {
  LabeledDataset train;
  LabeledDataset test;  // empty for episodic runs
  ClassSplit split;     // episodic runs only
};

Datasets load_datasets(const RunConfig& cfg);
ModelSpec model_for(const RunConfig& cfg, const Shape& image_shape);

struct TrainOutcome {
  ModelSpec spec;
  Params params;
  std::vector<MetricRow> rows;
  std::vector<std::uint64_t> backprops_per_update;
  std::uint64_t inner_backprops = 0;
  std::filesystem::path checkpoint_path, metrics_path, config_path;
};

/// Trains per `cfg`. With `write_outputs`, the output directory receives
/// config.resolved, metrics.csv and checkpoint.mbqt.
TrainOutcome run_train(const RunConfig& cfg, bool write_outputs = true);

/// Accuracy of the checkpoint on the evaluation split for each task, in
/// input order (one row per task, branch = position).
std::vector<MetricRow> run_eval(const RunConfig& cfg, const Checkpoint& ckpt, const std::vector<BitwidthTask>& tasks);

struct MetaEvalRow {
  BitwidthTask task;
  double accuracy = 0.0;       // after adaptation for MAML
  double ci95 = 0.0;           // half-width of the 95% interval
  double accuracy_before = 0.0;       // MAML only: no adaptation
  double median_improvement = 0.0;    // MAML only: paired over episodes
  std::vector<double> per_episode;
  std::vector<double> per_episode_before;
};

/// Episodes from the meta-test classes, shared by every task.
std::vector<MetaEvalRow> run_meta_eval(const RunConfig& cfg, const Checkpoint& ckpt,
                                       const std::vector<BitwidthTask>& tasks, std::size_t episodes);

/// Cost report with backprops measured over one instrumented outer update
/// (run on a scratch copy of the parameters).
CostReport run_report_cost(const RunConfig& cfg, const Checkpoint& ckpt);

std::string format_eval_table(const std::vector<MetricRow>& rows);
std::string format_meta_eval_table(const std::vector<MetaEvalRow>& rows, bool maml);

}  // namespace bitadapt
