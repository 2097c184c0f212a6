// bitadapt command-line front end.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "bitadapt/checkpoint.hpp"
#include "bitadapt/config.hpp"
#include "bitadapt/cost.hpp"
#include "bitadapt/data.hpp"
#include "bitadapt/errors.hpp"
#include "bitadapt/gradcheck_suite.hpp"
#include "bitadapt/runner.hpp"

namespace ba = bitadapt;

namespace {

struct CommonFlags {
  std::string config;
  std::string seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key = value config file");
  app->add_option("--seed", f.seed, "override 'seed'");
  app->add_option("--out", f.out, "override 'output' (output directory)");
  app->add_option("--set", f.sets, "override any key: --set key=value (repeatable)");
}

ba::RunConfig build_config(const CommonFlags& f, const std::map<std::string, std::string>& extra = {}) {
  std::map<std::string, std::string> values;
  if (!f.config.empty()) values = ba::load_key_values(f.config);
  for (const auto& [k, v] : extra) values[k] = v;
  if (!f.seed.empty()) values["seed"] = f.seed;
  if (!f.out.empty()) values["output"] = f.out;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ba::ConfigError(s, "--set expects key=value");
    values[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return ba::RunConfig::from_values(values);
}

std::vector<ba::BitwidthTask> parse_task_list(const std::string& text) {
  std::vector<ba::BitwidthTask> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find(';', pos), text.size());
    const auto item = text.substr(pos, end - pos);
    if (!item.empty()) out.push_back(ba::BitwidthTask::parse(item));
    pos = end + 1;
  }
  return out;
}

void set_log_level() {
  if (const char* env = std::getenv("BITADAPT_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  } else {
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level();
  CLI::App app{"bitwidth-adaptive quantization-aware training"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, meta_f, cost_f;
  std::string eval_ckpt, meta_ckpt, cost_ckpt, eval_tasks, meta_tasks;
  std::size_t episodes = 0;

  auto* train = app.add_subcommand("train", "train with the engine named in the config");
  add_common(train, train_f);

  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint for a list of (b_w, b_a) pairs");
  add_common(eval, eval_f);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint.mbqt")->required();
  eval->add_option("--tasks", eval_tasks, "pairs 'w,a;w,a' (default: eval.tasks)");

  auto* meta = app.add_subcommand("meta-eval", "few-shot episodes on the meta-test classes");
  add_common(meta, meta_f);
  meta->add_option("--checkpoint", meta_ckpt, "checkpoint.mbqt")->required();
  meta->add_option("--episodes", episodes, "episodes R (default: eval.episodes)");
  meta->add_option("--tasks", meta_tasks, "pairs 'w,a;w,a' (default: eval.tasks)");

  std::uint64_t gc_seed = 0;
  std::size_t gc_trials = 1;
  std::string gc_filter;
  bool gc_list = false;
  auto* gc = app.add_subcommand("gradcheck", "autodiff vs central differences");
  gc->add_option("--seed", gc_seed, "base seed");
  gc->add_option("--trials", gc_trials, "independent trials per case");
  gc->add_option("--filter", gc_filter, "only cases whose name contains this");
  gc->add_flag("--list", gc_list, "print case names and exit");

  auto* cost = app.add_subcommand("report-cost", "training and storage cost of a checkpoint");
  add_common(cost, cost_f);
  cost->add_option("--checkpoint", cost_ckpt, "checkpoint.mbqt")->required();

  std::string syn_out;
  ba::GlyphConfig glyphs;
  std::size_t test_samples = 0;
  auto* syn = app.add_subcommand("make-synthetic", "write synthetic glyphs as IDX files");
  syn->add_option("--out", syn_out, "output directory")->required();
  syn->add_option("--seed", glyphs.seed, "generator seed");
  syn->add_option("--classes", glyphs.num_classes, "number of classes (<= 256)");
  syn->add_option("--samples", glyphs.samples_per_class, "train samples per class");
  syn->add_option("--test-samples", test_samples, "test samples per class (0 = no test files)");
  syn->add_option("--size", glyphs.image_size, "image side in pixels");
  syn->add_option("--jitter", glyphs.jitter, "distortion strength");
  syn->add_option("--noise", glyphs.noise, "pixel noise std-dev");

  auto* schema = app.add_subcommand("schema", "list every config key with its meaning");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = build_config(train_f);
      spdlog::info("engine {} model {} seed {}", ba::to_string(cfg.engine), ba::to_string(cfg.model_kind), cfg.seed);
      const auto out = ba::run_train(cfg);
      double last = 0.0;
      for (const auto& r : out.rows) last = r.loss;
      spdlog::info("{} updates, last logged loss {:.6f}", out.backprops_per_update.size(), last);
      spdlog::info("wrote {}, {}, {}", out.config_path.string(), out.metrics_path.string(),
                   out.checkpoint_path.string());
    } else if (*eval) {
      const auto cfg = build_config(eval_f);
      const auto ckpt = ba::read_checkpoint(eval_ckpt);
      const auto tasks = eval_tasks.empty() ? cfg.eval_tasks : parse_task_list(eval_tasks);
      std::cout << ba::format_eval_table(ba::run_eval(cfg, ckpt, tasks));
    } else if (*meta) {
      const auto cfg = build_config(meta_f);
      const auto ckpt = ba::read_checkpoint(meta_ckpt);
      const auto tasks = meta_tasks.empty() ? cfg.eval_tasks : parse_task_list(meta_tasks);
      const auto r = episodes ? episodes : cfg.eval_episodes;
      spdlog::info("{} episodes, {} tasks", r, tasks.size());
      std::cout << ba::format_meta_eval_table(ba::run_meta_eval(cfg, ckpt, tasks, r),
                                              cfg.engine == ba::Engine::mebqat_maml);
    } else if (*gc) {
      if (gc_list) {
        for (const auto& n : ba::gradcheck_case_names()) std::cout << n << '\n';
        return 0;
      }
      const auto entries = ba::run_gradcheck_trials(gc_seed, gc_trials, gc_filter);
      if (entries.empty()) throw ba::Error("no gradcheck case matches '" + gc_filter + "'");
      std::cout << ba::format_gradcheck_table(entries);
      return ba::gradcheck_suite_passed(entries) ? 0 : 1;
    } else if (*cost) {
      const auto cfg = build_config(cost_f);
      const auto ckpt = ba::read_checkpoint(cost_ckpt);
      std::cout << ba::format_cost_report(ba::run_report_cost(cfg, ckpt));
    } else if (*schema) {
      for (const auto& [key, doc] : ba::config_schema()) std::cout << key << "\t" << doc << '\n';
    } else if (*syn) {
      std::filesystem::create_directories(syn_out);
      const std::filesystem::path dir = syn_out;
      const auto train_ds = ba::make_glyphs(glyphs);
      ba::write_idx(train_ds, dir / "train-images.idx", dir / "train-labels.idx");
      spdlog::info("{} train images in {}", train_ds.size(), dir.string());
      if (test_samples > 0) {
        auto g = glyphs;
        g.first_sample = glyphs.samples_per_class;
        g.samples_per_class = test_samples;
        const auto test_ds = ba::make_glyphs(g);
        ba::write_idx(test_ds, dir / "test-images.idx", dir / "test-labels.idx");
        spdlog::info("{} test images", test_ds.size());
      }
    }
  } catch (const ba::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
