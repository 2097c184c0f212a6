#include "bitadapt/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "bitadapt/errors.hpp"
#include "bitadapt/metrics.hpp"

namespace bitadapt {

namespace {

LabeledDataset subset(const LabeledDataset& ds, std::size_t count) {
  LabeledDataset out;
  out.image_shape = ds.image_shape;
  count = std::min(count, ds.size());
  out.pixels.assign(ds.pixels.begin(), ds.pixels.begin() + static_cast<std::ptrdiff_t>(count * ds.image_numel()));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(count));
  out.build_index();
  return out;
}

const LabeledDataset& eval_split(const Datasets& d) { return d.test.size() ? d.test : d.train; }


EpochResult run_engine_epoch(const RunConfig& cfg, Params& params, const ModelSpec& spec, const Datasets& data,
                             const LabeledDataset& train, Optimizer& opt, EngineRngs& rngs, std::size_t epoch) {
  switch (cfg.engine) {
    case Engine::qat: {
      QatConfig q;
      q.task = cfg.qat_task;
      q.batch_size = cfg.batch_size;
      q.policy = cfg.policy;
      q.logging = cfg.logging;
      return run_qat_epoch(params, spec, q, train, opt, rngs, epoch);
    }
    case Engine::mebqat: {
      MebqatConfig m;
      m.branches = cfg.branches;
      m.tasks = cfg.tasks;
      m.fix_first_fp = cfg.fix_first_fp;
      m.kd_enabled = cfg.kd;
      m.batch_size = cfg.batch_size;
      m.policy = cfg.policy;
      m.logging = cfg.logging;
      return run_mebqat_epoch(params, spec, m, train, opt, rngs, epoch);
    }
    case Engine::mebqat_maml:
      return run_mebqat_maml_epoch(params, spec, cfg.maml, train, data.split.meta_train, opt, rngs, epoch);
    case Engine::mebqat_pn:
      return run_mebqat_pn_epoch(params, spec, cfg.pn, train, data.split.meta_train, opt, rngs, epoch);
  }
  throw std::logic_error("unhandled engine");
}

void check_labels_fit(const RunConfig& cfg, const Datasets& data) {
  if (is_episodic(cfg.engine)) return;
  for (const auto* ds : {&data.train, &data.test}) {
    for (const auto& [c, idx] : ds->class_index) {
      if (c < 0 || static_cast<std::size_t>(c) >= cfg.model_width) {
        throw ConfigError("model.width", "label " + std::to_string(c) + " does not fit " +
                                             std::to_string(cfg.model_width) + " output classes");
      }
    }
  }
}

}  // namespace

Datasets load_datasets(const RunConfig& cfg) {
  Datasets d;
  if (cfg.data.source == "synthetic") {
    auto g = cfg.data.synthetic;
    d.train = make_glyphs(g);
    if (cfg.data.test_samples_per_class > 0) {
      g.first_sample = g.samples_per_class;
      g.samples_per_class = cfg.data.test_samples_per_class;
      d.test = make_glyphs(g);
    }
  } else {
    d.train = load_idx(cfg.data.train_images, cfg.data.train_labels);
    if (!cfg.data.test_images.empty()) d.test = load_idx(cfg.data.test_images, cfg.data.test_labels);
  }
  if (is_episodic(cfg.engine)) {
    if (cfg.data.meta_train_classes == 0 || cfg.data.meta_train_classes >= d.train.class_index.size()) {
      throw ConfigError("data.meta_train_classes", "must leave classes on both sides of the split");
    }
    d.split = ClassSplit::by_count(d.train, cfg.data.meta_train_classes);
    d.split.validate(d.train);
  }
  return d;
}

ModelSpec model_for(const RunConfig& cfg, const Shape& image_shape) {
  return build_model(cfg.model_kind, cfg.model_width, image_shape);
}

TrainOutcome run_train(const RunConfig& cfg, bool write_outputs) {
  const auto data = load_datasets(cfg);
  check_labels_fit(cfg, data);
  TrainOutcome out;
  out.spec = model_for(cfg, data.train.image_shape);
  Rng init(mix_seed(cfg.seed, 1));
  out.params = init_params(out.spec, init);
  Optimizer opt(cfg.optimizer);
  EngineRngs rngs(cfg.seed);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    opt.set_learning_rate(rate_at(cfg.schedule, e));
    auto r = run_engine_epoch(cfg, out.params, out.spec, data, data.train, opt, rngs, e);
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
    out.backprops_per_update.insert(out.backprops_per_update.end(), r.backprops_per_update.begin(),
                                    r.backprops_per_update.end());
    out.inner_backprops += r.inner_backprops;
  }
  if (write_outputs) {
    const std::filesystem::path dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    out.config_path = dir / "config.resolved";
    out.metrics_path = dir / "metrics.csv";
    out.checkpoint_path = dir / "checkpoint.mbqt";
    {
      std::ofstream c(out.config_path, std::ios::binary);
      c << cfg.to_text();
      if (!c) throw Error("cannot write " + out.config_path.string());
    }
    write_metrics(out.metrics_path, out.rows);
    CheckpointMeta meta{to_string(cfg.model_kind), cfg.model_width, data.train.image_shape, cfg.epochs,
                        rngs.data.state() + "|" + rngs.tasks.state()};
    write_checkpoint(out.checkpoint_path, out.params, meta);
  }
  return out;
}

std::vector<MetricRow> run_eval(const RunConfig& cfg, const Checkpoint& ckpt, const std::vector<BitwidthTask>& tasks) {
  const auto spec = checkpoint_model(ckpt);
  if (spec.role != OutputRole::logits) throw Error("eval needs a classifier checkpoint; use meta-eval for embeddings");
  const auto data = load_datasets(cfg);
  const auto& ds = eval_split(data);
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    MetricRow row;
    row.epoch = ckpt.meta.epoch;
    row.branch = i;
    row.task = tasks[i];
    row.accuracy = meta_test_mebqat(ckpt.params, spec, cfg.policy, tasks[i], ds, cfg.eval_batch_size);
    rows.push_back(row);
  }
  return rows;
}

std::vector<MetaEvalRow> run_meta_eval(const RunConfig& cfg, const Checkpoint& ckpt,
                                       const std::vector<BitwidthTask>& tasks, std::size_t episodes) {
  if (!is_episodic(cfg.engine)) throw ConfigError("engine", "meta-eval needs mebqat-maml or mebqat-pn");
  const auto spec = checkpoint_model(ckpt);
  const auto data = load_datasets(cfg);
  Rng rng(mix_seed(cfg.seed, 0xE7A1));
  std::vector<Episode> eps;
  eps.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    eps.push_back(sample_episode(data.train, data.split.meta_test, cfg.episode_ways(), cfg.episode_shots(),
                                 cfg.episode_queries(), rng));
  }
  const bool maml = cfg.engine == Engine::mebqat_maml;
  std::vector<MetaEvalRow> rows;
  for (const auto& task : tasks) {
    MetaEvalRow row;
    row.task = task;
    for (const auto& ep : eps) {
      if (maml) {
        row.per_episode_before.push_back(meta_test_maml(ckpt.params, spec, cfg.policy, task, ep, 0, 0.0));
        row.per_episode.push_back(
            meta_test_maml(ckpt.params, spec, cfg.policy, task, ep, cfg.maml.meta_test_steps, cfg.maml.inner_rate));
      } else {
        row.per_episode.push_back(meta_test_pn(ckpt.params, spec, cfg.policy, task, ep));
      }
    }
    auto mean_of = [](const std::vector<double>& v) {
      double s = 0.0;
      for (auto x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    row.accuracy = mean_of(row.per_episode);
    double var = 0.0;
    for (auto x : row.per_episode) var += (x - row.accuracy) * (x - row.accuracy);
    const double n = static_cast<double>(row.per_episode.size());
    row.ci95 = n > 1 ? 1.96 * std::sqrt(var / (n - 1)) / std::sqrt(n) : 0.0;
    if (maml) {
      row.accuracy_before = mean_of(row.per_episode_before);
      std::vector<double> diff(row.per_episode.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = row.per_episode[i] - row.per_episode_before[i];
      std::sort(diff.begin(), diff.end());
      if (!diff.empty()) {
        const std::size_t m = diff.size() / 2;
        row.median_improvement = diff.size() % 2 ? diff[m] : 0.5 * (diff[m - 1] + diff[m]);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

CostReport run_report_cost(const RunConfig& cfg, const Checkpoint& ckpt) {
  const auto spec = checkpoint_model(ckpt);
  const std::size_t m = cfg.engine == Engine::qat ? 1 : cfg.branches;
  auto report = describe_cost(spec, ckpt, cfg.tasks, m);
  report.engine = to_string(cfg.engine);
  const auto data = load_datasets(cfg);
  // One outer update on a scratch copy: a single batch for the batch engines,
  // a single episode round for the episodic ones.
  Params scratch = clone_params(ckpt.params);
  Optimizer opt(cfg.optimizer);
  EngineRngs rngs(cfg.seed);
  RunConfig one = cfg;
  one.maml.updates_per_epoch = 1;
  one.pn.updates_per_epoch = 1;
  one.logging.every = 0;
  const auto train = is_episodic(cfg.engine) ? data.train : subset(data.train, cfg.batch_size);
  const auto r = run_engine_epoch(one, scratch, spec, data, train, opt, rngs, 0);
  if (r.updates != 1) throw Error("cost probe expected exactly one update");
  report.backprops_per_update = static_cast<double>(r.backprops_per_update.front());
  report.inner_backprops_per_update = static_cast<double>(r.inner_backprops);
  return report;
}

std::string format_eval_table(const std::vector<MetricRow>& rows) {
  std::string out = "b_w,b_a,accuracy\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f\n", r.task.w.to_string().c_str(), r.task.a.to_string().c_str(),
                  r.accuracy);
    out += buf;
  }
  return out;
}

std::string format_meta_eval_table(const std::vector<MetaEvalRow>& rows, bool maml) {
  std::string out = maml ? "b_w,b_a,accuracy,ci95,accuracy_before,median_improvement\n" : "b_w,b_a,accuracy,ci95\n";
  char buf[160];
  for (const auto& r : rows) {
    if (maml) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f\n", r.task.w.to_string().c_str(),
                    r.task.a.to_string().c_str(), r.accuracy, r.ci95, r.accuracy_before, r.median_improvement);
    } else {
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", r.task.w.to_string().c_str(), r.task.a.to_string().c_str(),
                    r.accuracy, r.ci95);
    }
    out += buf;
  }
  return out;
}

}  // namespace bitadapt
