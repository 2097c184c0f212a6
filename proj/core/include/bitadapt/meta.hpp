#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "bitadapt/data.hpp"
#include "bitadapt/models.hpp"
#include "bitadapt/optim.hpp"
#include "bitadapt/quant.hpp"

namespace bitadapt {

/// One branch of one logged update (training) or one evaluation result.
struct MetricRow {
  std::size_t epoch = 0;
  std::size_t branch = 0;
  BitwidthTask task;
  double loss = 0.0;
  double kd_loss = 0.0;
  double accuracy = 0.0;
  std::uint64_t backprops = 0;
  double wall_ms = 0.0;
};

struct LoggingOptions {
  /// Emit rows for every n-th update of an epoch (the first update is always
  /// logged); 0 disables training rows.
  std::size_t every = 1;
  /// Off by default so repeated runs produce identical metrics files.
  bool record_wall_time = false;
};

struct EpochResult {
  std::vector<MetricRow> rows;
  std::size_t updates = 0;
  /// Backward passes that produced the outer gradient, per update.
  std::vector<std::uint64_t> backprops_per_update;
  /// MAML only: backward passes spent in inner-loop adaptation.
  std::uint64_t inner_backprops = 0;
  double mean_loss = 0.0;
};

struct MebqatConfig {
  std::size_t branches = 4;  // M
  BitwidthTaskSet tasks = BitwidthTaskSet::uniform({Bitwidth::fp()});
  bool fix_first_fp = true;
  bool kd_enabled = true;
  std::size_t batch_size = 64;
  bool shuffle = true;
  bool drop_last = false;
  QuantPolicy policy;
  LoggingOptions logging;
};

struct MamlConfig {
  std::size_t branches = 4;        // M
  std::size_t inner_steps = 5;     // U
  double inner_rate = 0.1;         // alpha
  std::size_t meta_test_steps = 5;
  std::size_t ways = 5, shots = 1, queries = 5;
  std::size_t updates_per_epoch = 1;
  BitwidthTaskSet tasks = BitwidthTaskSet::uniform({Bitwidth::fp()});
  bool fix_first_fp = false;
  QuantPolicy policy;
  LoggingOptions logging;
};

struct PnConfig {
  std::size_t branches = 4;  // M
  std::size_t ways = 5, shots = 1, queries = 15;
  std::size_t updates_per_epoch = 1;
  BitwidthTaskSet tasks = BitwidthTaskSet::uniform({Bitwidth::fp()});
  bool fix_first_fp = false;
  QuantPolicy policy;
  LoggingOptions logging;
};

/// Dataset profiles with the published inner-loop settings: "omniglot-like"
/// (M = 16, alpha = 0.1, 5 test steps, 20-way) and "miniimagenet-like"
/// (M = 4, alpha = 0.01, 10 test steps, 5-way).
MamlConfig maml_preset(std::string_view profile);

/// Independent generators for data order and bitwidth draws, so changing
/// one never perturbs the other.
struct EngineRngs {
  Rng data;
  Rng tasks;

  explicit EngineRngs(std::uint64_t seed) : data(mix_seed(seed, 11)), tasks(mix_seed(seed, 23)) {}
};

/// KL(softmax(teacher) || softmax(student)) averaged over the batch. The
/// teacher is treated as a constant.
template <Real T>
BasicTensor<T> kd_loss(const BasicTensor<T>& student_logits, const BasicTensor<T>& teacher_logits);

/// One pass over `ds`: per batch, FP soft labels from the current model, M
/// quantized branches (cross-entropy + distillation), averaged gradient fed to
/// `opt`.
EpochResult run_mebqat_epoch(Params& theta, const ModelSpec& spec, const MebqatConfig& cfg, const LabeledDataset& ds,
                             Optimizer& opt, EngineRngs& rngs, std::size_t epoch);

/// Adapts a copy of theta with `steps` SGD steps on the support set; each step
/// quantizes the full-precision copy afresh. `theta` is untouched.
Params inner_adapt(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy, const BitwidthTask& task,
                   const Tensor& support_x, std::span<const std::int64_t> support_y, double rate, std::size_t steps);

/// First-order MAML: per branch a fresh bitwidth and episode, adaptation on
/// the support set, query gradient at the adapted weights used as the meta
/// gradient.
EpochResult run_mebqat_maml_epoch(Params& theta, const ModelSpec& spec, const MamlConfig& cfg,
                                  const LabeledDataset& ds, std::span<const std::int64_t> classes, Optimizer& opt,
                                  EngineRngs& rngs, std::size_t epoch);

/// Class means of support embeddings (N*K, d), exactly K rows per class.
template <Real T>
BasicTensor<T> compute_prototypes(const BasicTensor<T>& support_embeddings, std::span<const std::int64_t> labels,
                                  std::size_t ways, std::size_t shots);

/// Sum over queries of d(e, c_y) + logsumexp(-d(e, c)), scaled by 1/(N*K).
template <Real T>
BasicTensor<T> pn_episode_loss(const BasicTensor<T>& query_embeddings, std::span<const std::int64_t> labels,
                               const BasicTensor<T>& prototypes, std::size_t shots);

/// Nearest prototype by squared Euclidean distance, ties to the lower class.
std::vector<std::int64_t> nearest_prototype(const Tensor& query_embeddings, const Tensor& prototypes);

/// One episode shared by M bitwidth branches, averaged prototype-loss
/// gradient per update.
EpochResult run_mebqat_pn_epoch(Params& theta, const ModelSpec& spec, const PnConfig& cfg, const LabeledDataset& ds,
                                std::span<const std::int64_t> classes, Optimizer& opt, EngineRngs& rngs,
                                std::size_t epoch);

/// Accuracy of the quantized model over one pass of `ds` in a fixed shuffled
/// order (the same batches for every task).
double meta_test_mebqat(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy,
                        const BitwidthTask& task, const LabeledDataset& ds, std::size_t batch_size = 256);

/// Query accuracy after `steps` adaptation steps (0 evaluates theta as is).
double meta_test_maml(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy, const BitwidthTask& task,
                      const Episode& episode, std::size_t steps, double rate);

/// Query accuracy of nearest-prototype classification.
double meta_test_pn(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy, const BitwidthTask& task,
                    const Episode& episode);

struct QatConfig {
  BitwidthTask task;
  std::size_t batch_size = 64;
  bool shuffle = true;
  bool drop_last = false;
  QuantPolicy policy;
  LoggingOptions logging;
};

/// One epoch of ordinary quantization-aware training at a single task.
EpochResult run_qat_epoch(Params& theta, const ModelSpec& spec, const QatConfig& cfg, const LabeledDataset& ds,
                          Optimizer& opt, EngineRngs& rngs, std::size_t epoch);

/// `epochs` epochs of run_qat_epoch with the schedule applied per epoch.
std::vector<MetricRow> train_dedicated_qat(Params& theta, const ModelSpec& spec, const QatConfig& cfg,
                                           const LabeledDataset& ds, Optimizer& opt, const Schedule& schedule,
                                           std::size_t epochs, EngineRngs& rngs);

/// Stacks support then query images of an episode into one batch.
Tensor episode_batch(const Episode& episode);

}  // namespace bitadapt
