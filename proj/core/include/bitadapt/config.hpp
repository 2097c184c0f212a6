#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bitadapt/data.hpp"
#include "bitadapt/meta.hpp"
#include "bitadapt/models.hpp"
#include "bitadapt/optim.hpp"
#include "bitadapt/quant.hpp"

namespace bitadapt {

/// Flat `key = value` text. `#` starts a comment, blank lines are ignored,
/// `[section]` headers prefix the following keys with "section.".
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::map<std::string, std::string> load_key_values(const std::filesystem::path& path);

enum class Engine { qat, mebqat, mebqat_maml, mebqat_pn };

Engine parse_engine(std::string_view text);
std::string to_string(Engine engine);
bool is_episodic(Engine engine);

struct DataConfig {
  std::string source = "synthetic";  // synthetic | idx
  std::string train_images, train_labels, test_images, test_labels;
  GlyphConfig synthetic;               // train split
  std::size_t test_samples_per_class = 0;
  std::size_t meta_train_classes = 0;  // episodic class split
};

/// Every user-settable value of a run. Built from key-value text with all
/// defaults filled in; `resolved` keeps the effective value of every key.
struct RunConfig {
  Engine engine = Engine::mebqat;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  ModelKind model_kind = ModelKind::conv8_reduced;
  std::size_t model_width = 0;

  DataConfig data;

  BitwidthTaskSet tasks;
  bool fix_first_fp = true;
  QuantPolicy policy;
  BitwidthTask qat_task;

  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  std::size_t branches = 4;
  bool kd = true;

  OptimizerConfig optimizer;
  Schedule schedule;

  MamlConfig maml;  // inner loop and episode shape for mebqat-maml
  PnConfig pn;      // episode shape for mebqat-pn

  LoggingOptions logging;
  std::size_t eval_episodes = 600;
  std::size_t eval_batch_size = 256;
  std::vector<BitwidthTask> eval_tasks;

  std::map<std::string, std::string> resolved;

  /// Validates every field; throws ConfigError naming the offending key.
  static RunConfig from_values(const std::map<std::string, std::string>& values);
  /// Resolved configuration as key-value text, one key per line, sorted.
  std::string to_text() const;

  std::size_t episode_ways() const;
  std::size_t episode_shots() const;
  std::size_t episode_queries() const;
};

/// Documented keys with a one-line description each, in schema order.
std::vector<std::pair<std::string, std::string>> config_schema();

}  // namespace bitadapt
