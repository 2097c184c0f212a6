#include "bitadapt/meta.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "bitadapt/errors.hpp"
#include "bitadapt/ops.hpp"

namespace bitadapt {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Branch gradients summed in double in branch order, then averaged.
class GradAccumulator {
 public:
  void add(const Params& params) {
    for (const auto& [name, t] : params) {
      auto& acc = sum_[name];
      if (acc.empty()) acc.assign(t.numel(), 0.0);
      if (!t.has_grad()) continue;
      auto g = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }

  GradMap mean(std::size_t m) const {
    GradMap out;
    const double div = static_cast<double>(m);
    for (const auto& [name, acc] : sum_) {
      auto& g = out[name];
      g.resize(acc.size());
      for (std::size_t i = 0; i < acc.size(); ++i) g[i] = static_cast<float>(acc[i] / div);
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<double>> sum_;
};

void zero_grads(Params& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

double accuracy_of(const std::vector<std::int64_t>& predicted, std::span<const std::int64_t> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

bool should_log(const LoggingOptions& log, std::size_t update) { return log.every != 0 && update % log.every == 0; }

std::uint64_t timed_backward(const Tensor& loss) {
  const auto before = backward_pass_count();
  loss.backward();
  return backward_pass_count() - before;
}

void finish(EpochResult& r, double loss_sum, std::size_t loss_count) {
  r.mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
}

}  // namespace

MamlConfig maml_preset(std::string_view profile) {
  MamlConfig cfg;
  if (profile == "omniglot-like") {
    cfg.branches = 16;
    cfg.inner_rate = 0.1;
    cfg.inner_steps = 5;
    cfg.meta_test_steps = 5;
    cfg.ways = 20;
    cfg.shots = 1;
  } else if (profile == "miniimagenet-like") {
    cfg.branches = 4;
    cfg.inner_rate = 0.01;
    cfg.inner_steps = 5;
    cfg.meta_test_steps = 10;
    cfg.ways = 5;
    cfg.shots = 1;
  } else {
    throw std::invalid_argument("unknown dataset profile '" + std::string(profile) + "'");
  }
  return cfg;
}

template <Real T>
BasicTensor<T> kd_loss(const BasicTensor<T>& student_logits, const BasicTensor<T>& teacher_logits) {
  if (student_logits.shape() != teacher_logits.shape() || student_logits.rank() != 2) {
    throw ShapeError("kd_loss", "student " + shape_to_string(student_logits.shape()) + " vs teacher " +
                                    shape_to_string(teacher_logits.shape()));
  }
  BasicTensor<T> log_pt, pt;
  {
    NoGradGuard ng;
    log_pt = log_softmax(teacher_logits.detach(), 1);
    std::vector<T> p(log_pt.numel());
    auto lp = log_pt.data();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(std::exp(static_cast<double>(lp[i])));
    pt = BasicTensor<T>::from_data(log_pt.shape(), std::move(p));
  }
  const T inv_batch = T{1} / static_cast<T>(student_logits.dim(0));
  return scale(sum(mul(pt, sub(log_pt, log_softmax(student_logits, 1)))), inv_batch);
}

EpochResult run_mebqat_epoch(Params& theta, const ModelSpec& spec, const MebqatConfig& cfg, const LabeledDataset& ds,
                             Optimizer& opt, EngineRngs& rngs, std::size_t epoch) {
  if (cfg.branches < 1) throw std::invalid_argument("MEBQAT needs at least one branch");
  EpochResult result;
  BatchIterator batches(ds.size(), cfg.batch_size, cfg.shuffle, cfg.drop_last, rngs.data);
  std::vector<std::size_t> batch;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  while (batches.next(batch)) {
    const auto x = ds.images(batch);
    const auto y = ds.labels_at(batch);
    const auto tasks = sample_bitwidth_tasks(cfg.tasks, cfg.branches, rngs.tasks, cfg.fix_first_fp);
    const bool log = should_log(cfg.logging, result.updates);

    bool need_teacher = false;
    for (const auto& t : tasks) need_teacher = need_teacher || (cfg.kd_enabled && !t.is_full_precision());
    Tensor teacher;
    if (need_teacher) {
      NoGradGuard ng;
      teacher = forward(spec, theta, x);
    }

    GradAccumulator acc;
    std::uint64_t backprops = 0;
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      const auto start = Clock::now();
      zero_grads(theta);
      const auto logits = forward_quantized(spec, theta, x, tasks[j], cfg.policy);
      const auto ce = cross_entropy(logits, y);
      Tensor total = ce;
      double kd = 0.0;
      if (cfg.kd_enabled && !tasks[j].is_full_precision()) {
        const auto k = kd_loss(logits, teacher);
        kd = k.item();
        total = add(ce, k);
      }
      const auto bp = timed_backward(total);
      backprops += bp;
      acc.add(theta);
      loss_sum += ce.item() + kd;
      ++loss_count;
      if (log) {
        MetricRow row{epoch, j, tasks[j], ce.item(), kd, accuracy_of(argmax_rows(logits), y), bp, 0.0};
        if (cfg.logging.record_wall_time) row.wall_ms = elapsed_ms(start);
        result.rows.push_back(row);
      }
    }
    opt.apply(theta, acc.mean(tasks.size()));
    zero_grads(theta);
    result.backprops_per_update.push_back(backprops);
    ++result.updates;
  }
  finish(result, loss_sum, loss_count);
  return result;
}

Params inner_adapt(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy, const BitwidthTask& task,
                   const Tensor& support_x, std::span<const std::int64_t> support_y, double rate, std::size_t steps) {
  Params phi = clone_params(theta);
  for (auto& [name, t] : phi) t.set_requires_grad(true);
  const auto lr = static_cast<float>(rate);
  for (std::size_t u = 0; u < steps; ++u) {
    zero_grads(phi);
    const auto loss = cross_entropy(forward_quantized(spec, phi, support_x, task, policy), support_y);
    loss.backward();
    for (auto& [name, t] : phi) {
      if (t.has_grad()) sgd_step(t.mutable_data(), t.grad(), lr);
    }
  }
  zero_grads(phi);
  return phi;
}

EpochResult run_mebqat_maml_epoch(Params& theta, const ModelSpec& spec, const MamlConfig& cfg,
                                  const LabeledDataset& ds, std::span<const std::int64_t> classes, Optimizer& opt,
                                  EngineRngs& rngs, std::size_t epoch) {
  if (cfg.branches < 1) throw std::invalid_argument("MEBQAT-MAML needs at least one branch");
  EpochResult result;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t update = 0; update < cfg.updates_per_epoch; ++update) {
    const auto tasks = sample_bitwidth_tasks(cfg.tasks, cfg.branches, rngs.tasks, cfg.fix_first_fp);
    const bool log = should_log(cfg.logging, update);
    GradAccumulator acc;
    std::uint64_t backprops = 0;
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      const auto start = Clock::now();
      const auto ep = sample_episode(ds, classes, cfg.ways, cfg.shots, cfg.queries, rngs.data);
      const auto inner_before = backward_pass_count();
      Params phi = inner_adapt(theta, spec, cfg.policy, tasks[j], ep.support_x, ep.support_y, cfg.inner_rate,
                               cfg.inner_steps);
      result.inner_backprops += backward_pass_count() - inner_before;
      const auto logits = forward_quantized(spec, phi, ep.query_x, tasks[j], cfg.policy);
      const auto loss = cross_entropy(logits, ep.query_y);
      const auto bp = timed_backward(loss);
      backprops += bp;
      acc.add(phi);
      loss_sum += loss.item();
      ++loss_count;
      if (log) {
        MetricRow row{epoch, j, tasks[j], loss.item(), 0.0, accuracy_of(argmax_rows(logits), ep.query_y), bp, 0.0};
        if (cfg.logging.record_wall_time) row.wall_ms = elapsed_ms(start);
        result.rows.push_back(row);
      }
    }
    opt.apply(theta, acc.mean(tasks.size()));
    result.backprops_per_update.push_back(backprops);
    ++result.updates;
  }
  finish(result, loss_sum, loss_count);
  return result;
}

template <Real T>
BasicTensor<T> compute_prototypes(const BasicTensor<T>& support_embeddings, std::span<const std::int64_t> labels,
                                  std::size_t ways, std::size_t shots) {
  if (support_embeddings.rank() != 2 || labels.size() != support_embeddings.dim(0)) {
    throw ShapeError("compute_prototypes", "embeddings " + shape_to_string(support_embeddings.shape()) + " with " +
                                               std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> counts(ways, 0);
  std::vector<std::size_t> groups(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= ways) {
      throw ShapeError("compute_prototypes", "label " + std::to_string(labels[i]) + " outside [0, " +
                                                 std::to_string(ways) + ")");
    }
    groups[i] = static_cast<std::size_t>(labels[i]);
    ++counts[groups[i]];
  }
  for (std::size_t n = 0; n < ways; ++n) {
    if (counts[n] != shots) {
      throw ShapeError("compute_prototypes", "class " + std::to_string(n) + " has " + std::to_string(counts[n]) +
                                                 " support samples, expected " + std::to_string(shots));
    }
  }
  return group_mean(support_embeddings, std::span<const std::size_t>(groups), ways);
}

template <Real T>
BasicTensor<T> pn_episode_loss(const BasicTensor<T>& query_embeddings, std::span<const std::int64_t> labels,
                               const BasicTensor<T>& prototypes, std::size_t shots) {
  const std::size_t ways = prototypes.dim(0);
  const auto logits = scale(squared_euclidean_distance(query_embeddings, prototypes), T{-1});
  const auto total = nll_loss(log_softmax(logits, 1), labels, Reduction::sum);
  return scale(total, static_cast<T>(1.0 / static_cast<double>(ways * shots)));
}

std::vector<std::int64_t> nearest_prototype(const Tensor& query_embeddings, const Tensor& prototypes) {
  NoGradGuard ng;
  return argmax_rows(scale(squared_euclidean_distance(query_embeddings.detach(), prototypes.detach()), -1.0f));
}

Tensor episode_batch(const Episode& episode) {
  const auto s = episode.support_x.data();
  std::vector<float> all(s.begin(), s.end());
  Shape shape = episode.support_x.shape();
  if (episode.query_x.defined()) {
    const auto q = episode.query_x.data();
    all.insert(all.end(), q.begin(), q.end());
    shape[0] += episode.query_x.dim(0);
  }
  return Tensor::from_data(std::move(shape), std::move(all));
}

EpochResult run_mebqat_pn_epoch(Params& theta, const ModelSpec& spec, const PnConfig& cfg, const LabeledDataset& ds,
                                std::span<const std::int64_t> classes, Optimizer& opt, EngineRngs& rngs,
                                std::size_t epoch) {
  if (cfg.branches < 1) throw std::invalid_argument("MEBQAT-PN needs at least one branch");
  if (cfg.queries < 1) throw std::invalid_argument("MEBQAT-PN needs query samples");
  EpochResult result;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  const std::size_t n_support = cfg.ways * cfg.shots;
  const std::size_t n_query = cfg.ways * cfg.queries;
  for (std::size_t update = 0; update < cfg.updates_per_epoch; ++update) {
    const auto ep = sample_episode(ds, classes, cfg.ways, cfg.shots, cfg.queries, rngs.data);
    const auto tasks = sample_bitwidth_tasks(cfg.tasks, cfg.branches, rngs.tasks, cfg.fix_first_fp);
    const auto batch = episode_batch(ep);
    const bool log = should_log(cfg.logging, update);
    GradAccumulator acc;
    std::uint64_t backprops = 0;
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      const auto start = Clock::now();
      zero_grads(theta);
      const auto emb = forward_quantized(spec, theta, batch, tasks[j], cfg.policy);
      const auto support = slice_rows(emb, 0, n_support);
      const auto query = slice_rows(emb, n_support, n_query);
      const auto protos = compute_prototypes(support, ep.support_y, cfg.ways, cfg.shots);
      const auto loss = pn_episode_loss(query, ep.query_y, protos, cfg.shots);
      const auto bp = timed_backward(loss);
      backprops += bp;
      acc.add(theta);
      loss_sum += loss.item();
      ++loss_count;
      if (log) {
        MetricRow row{epoch, j, tasks[j], loss.item(), 0.0,
                      accuracy_of(nearest_prototype(query, protos), ep.query_y), bp, 0.0};
        if (cfg.logging.record_wall_time) row.wall_ms = elapsed_ms(start);
        result.rows.push_back(row);
      }
    }
    opt.apply(theta, acc.mean(tasks.size()));
    zero_grads(theta);
    result.backprops_per_update.push_back(backprops);
    ++result.updates;
  }
  finish(result, loss_sum, loss_count);
  return result;
}

constexpr std::uint64_t kEvalOrderSeed = 0x0E7A1;

double meta_test_mebqat(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy,
                        const BitwidthTask& task, const LabeledDataset& ds, std::size_t batch_size) {
  NoGradGuard ng;
  // BN normalizes with batch statistics, so batches must mix classes like the
  // training batches do. The order is fixed so every task sees the same batches.
  Rng order(kEvalOrderSeed);
  BatchIterator batches(ds.size(), batch_size, true, false, order);
  std::vector<std::size_t> batch;
  std::size_t hits = 0;
  while (batches.next(batch)) {
    const auto y = ds.labels_at(batch);
    const auto pred = argmax_rows(forward_quantized(spec, theta, ds.images(batch), task, policy));
    for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i] ? 1 : 0;
  }
  return ds.size() ? static_cast<double>(hits) / static_cast<double>(ds.size()) : 0.0;
}

double meta_test_maml(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy, const BitwidthTask& task,
                      const Episode& episode, std::size_t steps, double rate) {
  const Params phi =
      steps == 0 ? theta : inner_adapt(theta, spec, policy, task, episode.support_x, episode.support_y, rate, steps);
  NoGradGuard ng;
  const auto pred = argmax_rows(forward_quantized(spec, phi, episode.query_x, task, policy));
  return accuracy_of(pred, episode.query_y);
}

double meta_test_pn(const Params& theta, const ModelSpec& spec, const QuantPolicy& policy, const BitwidthTask& task,
                    const Episode& episode) {
  NoGradGuard ng;
  const std::size_t n_support = episode.support_indices.size();
  const std::size_t n_query = episode.query_indices.size();
  const auto emb = forward_quantized(spec, theta, episode_batch(episode), task, policy);
  const auto protos =
      compute_prototypes(slice_rows(emb, 0, n_support), episode.support_y, episode.ways, episode.shots);
  return accuracy_of(nearest_prototype(slice_rows(emb, n_support, n_query), protos), episode.query_y);
}

EpochResult run_qat_epoch(Params& theta, const ModelSpec& spec, const QatConfig& cfg, const LabeledDataset& ds,
                          Optimizer& opt, EngineRngs& rngs, std::size_t epoch) {
  EpochResult result;
  BatchIterator batches(ds.size(), cfg.batch_size, cfg.shuffle, cfg.drop_last, rngs.data);
  std::vector<std::size_t> batch;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  while (batches.next(batch)) {
    const auto start = Clock::now();
    const auto x = ds.images(batch);
    const auto y = ds.labels_at(batch);
    zero_grads(theta);
    const auto logits = forward_quantized(spec, theta, x, cfg.task, cfg.policy);
    const auto loss = cross_entropy(logits, y);
    const auto bp = timed_backward(loss);
    opt.apply(theta, collect_grads(theta));
    zero_grads(theta);
    loss_sum += loss.item();
    ++loss_count;
    if (should_log(cfg.logging, result.updates)) {
      MetricRow row{epoch, 0, cfg.task, loss.item(), 0.0, accuracy_of(argmax_rows(logits), y), bp, 0.0};
      if (cfg.logging.record_wall_time) row.wall_ms = elapsed_ms(start);
      result.rows.push_back(row);
    }
    result.backprops_per_update.push_back(bp);
    ++result.updates;
  }
  finish(result, loss_sum, loss_count);
  return result;
}

std::vector<MetricRow> train_dedicated_qat(Params& theta, const ModelSpec& spec, const QatConfig& cfg,
                                           const LabeledDataset& ds, Optimizer& opt, const Schedule& schedule,
                                           std::size_t epochs, EngineRngs& rngs) {
  schedule.validate();
  std::vector<MetricRow> rows;
  for (std::size_t e = 0; e < epochs; ++e) {
    opt.set_learning_rate(rate_at(schedule, e));
    auto r = run_qat_epoch(theta, spec, cfg, ds, opt, rngs, e);
    rows.insert(rows.end(), r.rows.begin(), r.rows.end());
  }
  return rows;
}

template Tensor kd_loss(const Tensor&, const Tensor&);
template TensorD kd_loss(const TensorD&, const TensorD&);
template Tensor compute_prototypes(const Tensor&, std::span<const std::int64_t>, std::size_t, std::size_t);
template TensorD compute_prototypes(const TensorD&, std::span<const std::int64_t>, std::size_t, std::size_t);
template Tensor pn_episode_loss(const Tensor&, std::span<const std::int64_t>, const Tensor&, std::size_t);
template TensorD pn_episode_loss(const TensorD&, std::span<const std::int64_t>, const TensorD&, std::size_t);

}  // namespace bitadapt
