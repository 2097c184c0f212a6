#include "bitadapt/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "bitadapt/errors.hpp"

namespace bitadapt {

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<Bitwidth> to_bitwidths(const std::string& key, const std::string& v) {
  std::vector<Bitwidth> out;
  try {
    for (const auto& piece : split(v, ',')) out.push_back(Bitwidth::parse(piece));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
  return out;
}

std::vector<BitwidthTask> to_tasks(const std::string& key, const std::string& v) {
  std::vector<BitwidthTask> out;
  try {
    for (const auto& piece : split(v, ';')) out.push_back(BitwidthTask::parse(piece));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
  return out;
}

std::string join_tasks(const std::vector<BitwidthTask>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    if (!out.empty()) out += ';';
    out += t.w.to_string() + "," + t.a.to_string();
  }
  return out;
}

using Lookup = std::function<std::string(const std::string&)>;

struct Field {
  const char* key;
  const char* help;
  std::function<std::string(const Lookup&)> fallback;
};

std::string fixed(const char* v) { return v; }

bool episodic_engine(const Lookup& get) {
  const auto e = get("engine");
  return e == "mebqat-maml" || e == "mebqat-pn";
}

// Ordered so that every default only consults keys resolved before it.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"engine", "qat | mebqat | mebqat-maml | mebqat-pn", [](const Lookup&) { return fixed("mebqat"); }},
      {"seed", "master seed for data order, bitwidth draws and init", [](const Lookup&) { return fixed("0"); }},
      {"output", "output directory", [](const Lookup&) { return fixed("out"); }},
      {"model.kind", "conv4-pn | conv5-maml | conv8 | conv8-reduced",
       [](const Lookup& get) {
         const auto e = get("engine");
         if (e == "mebqat-maml") return fixed("conv5-maml");
         if (e == "mebqat-pn") return fixed("conv4-pn");
         return fixed("conv8-reduced");
       }},
      {"data.source", "synthetic | idx", [](const Lookup&) { return fixed("synthetic"); }},
      {"data.train_images", "IDX image file (idx source)", [](const Lookup&) { return fixed(""); }},
      {"data.train_labels", "IDX label file (idx source)", [](const Lookup&) { return fixed(""); }},
      {"data.test_images", "IDX image file for evaluation (idx source)", [](const Lookup&) { return fixed(""); }},
      {"data.test_labels", "IDX label file for evaluation (idx source)", [](const Lookup&) { return fixed(""); }},
      {"data.synthetic.seed", "glyph generator seed", [](const Lookup& get) { return get("seed"); }},
      {"data.synthetic.classes", "glyph classes",
       [](const Lookup& get) { return fixed(episodic_engine(get) ? "60" : "10"); }},
      {"data.synthetic.samples_per_class", "training glyphs per class",
       [](const Lookup& get) { return fixed(episodic_engine(get) ? "20" : "500"); }},
      {"data.synthetic.test_samples_per_class", "held-out glyphs per class",
       [](const Lookup& get) { return fixed(episodic_engine(get) ? "0" : "100"); }},
      {"data.synthetic.image_size", "glyph side length in pixels",
       [](const Lookup& get) { return fixed(episodic_engine(get) ? "16" : "28"); }},
      {"data.synthetic.jitter", "per-sample distortion strength", [](const Lookup&) { return fixed("1"); }},
      {"data.synthetic.noise", "additive pixel noise std-dev", [](const Lookup&) { return fixed("0"); }},
      {"data.meta_train_classes", "classes (lowest ids) used for meta-training; the rest meta-test",
       [](const Lookup& get) {
         if (!episodic_engine(get)) return fixed("0");
         const auto n = std::stoul(get("data.synthetic.classes"));
         return std::to_string(n * 2 / 3);
       }},
      {"maml.profile", "omniglot-like | miniimagenet-like | empty for plain defaults",
       [](const Lookup&) { return fixed(""); }},
      {"episode.ways", "N classes per episode",
       [](const Lookup& get) { return get("maml.profile") == "omniglot-like" ? fixed("20") : fixed("5"); }},
      {"episode.shots", "K support samples per class", [](const Lookup&) { return fixed("1"); }},
      {"episode.queries", "Q query samples per class",
       [](const Lookup& get) { return fixed(get("engine") == "mebqat-pn" ? "15" : "5"); }},
      {"episode.updates_per_epoch", "outer updates per epoch for episodic engines",
       [](const Lookup&) { return fixed("100"); }},
      {"model.width", "classes for classifiers, filters for conv4-pn",
       [](const Lookup& get) {
         const auto e = get("engine");
         if (e == "mebqat-pn") return fixed("64");
         if (e == "mebqat-maml") return get("episode.ways");
         return get("data.source") == "synthetic" ? get("data.synthetic.classes") : fixed("10");
       }},
      {"quant.weights", "weight bitwidth candidates", [](const Lookup&) { return fixed("1,2,3,4,5,6,7,8,16,FP"); }},
      {"quant.activations", "activation bitwidth candidates", [](const Lookup& get) { return get("quant.weights"); }},
      {"quant.minor", "weight bitwidths given a reserved branch", [](const Lookup&) { return fixed(""); }},
      {"quant.tuples", "explicit task list 'w,a;w,a' (overrides candidates)", [](const Lookup&) { return fixed(""); }},
      {"quant.fix_first_fp", "first branch of every update is (FP,FP)",
       [](const Lookup& get) { return fixed(get("engine") == "mebqat" ? "true" : "false"); }},
      {"quant.quantize_first_layer", "quantize the first weight layer", [](const Lookup&) { return fixed("false"); }},
      {"quant.quantize_last_layer", "quantize the last weight layer", [](const Lookup&) { return fixed("false"); }},
      {"train.task", "fixed task for the qat engine", [](const Lookup&) { return fixed("FP,FP"); }},
      {"train.epochs", "epochs", [](const Lookup&) { return fixed("1"); }},
      {"train.batch_size", "mini-batch size (qat, mebqat)", [](const Lookup&) { return fixed("64"); }},
      {"train.branches", "bitwidth branches M per outer update",
       [](const Lookup& get) {
         if (get("engine") == "qat") return fixed("1");
         return get("maml.profile") == "omniglot-like" ? fixed("16") : fixed("4");
       }},
      {"train.kd", "distillation from the FP model (mebqat)", [](const Lookup&) { return fixed("true"); }},
      {"optim.kind", "sgd | adam | adamw", [](const Lookup&) { return fixed("adam"); }},
      {"optim.lr", "outer learning rate", [](const Lookup&) { return fixed("0.001"); }},
      {"optim.beta1", "Adam beta1", [](const Lookup&) { return fixed("0.9"); }},
      {"optim.beta2", "Adam beta2", [](const Lookup&) { return fixed("0.999"); }},
      {"optim.eps", "Adam epsilon", [](const Lookup&) { return fixed("1e-08"); }},
      {"optim.weight_decay", "AdamW decoupled weight decay", [](const Lookup&) { return fixed("0"); }},
      {"schedule.kind", "constant | step | cosine (stepped per epoch)", [](const Lookup&) { return fixed("constant"); }},
      {"schedule.milestones", "step decay epochs, comma separated", [](const Lookup&) { return fixed(""); }},
      {"schedule.factor", "step decay factor", [](const Lookup&) { return fixed("0.1"); }},
      {"schedule.t_max", "cosine period in epochs", [](const Lookup& get) { return get("train.epochs"); }},
      {"maml.inner_steps", "inner SGD steps U during meta-training", [](const Lookup&) { return fixed("5"); }},
      {"maml.inner_rate", "inner learning rate alpha",
       [](const Lookup& get) { return get("maml.profile") == "miniimagenet-like" ? fixed("0.01") : fixed("0.1"); }},
      {"maml.meta_test_steps", "adaptation steps at meta-test",
       [](const Lookup& get) { return get("maml.profile") == "miniimagenet-like" ? fixed("10") : fixed("5"); }},
      {"metrics.log_every", "log branch rows every n-th update (0 = never)", [](const Lookup&) { return fixed("1"); }},
      {"metrics.record_wall_time", "fill wall_ms (makes metrics non-reproducible)",
       [](const Lookup&) { return fixed("false"); }},
      {"eval.episodes", "meta-eval episodes R", [](const Lookup&) { return fixed("600"); }},
      {"eval.batch_size", "evaluation batch size", [](const Lookup&) { return fixed("256"); }},
      {"eval.tasks", "tasks to sweep 'w,a;w,a' (empty = every valid pair)", [](const Lookup&) { return fixed(""); }},
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no), "unterminated section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    auto key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "empty key");
    if (!section.empty()) key = section + "." + key;
    out[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

Engine parse_engine(std::string_view text) {
  if (text == "qat") return Engine::qat;
  if (text == "mebqat") return Engine::mebqat;
  if (text == "mebqat-maml") return Engine::mebqat_maml;
  if (text == "mebqat-pn") return Engine::mebqat_pn;
  throw std::invalid_argument("unknown engine '" + std::string(text) + "'");
}

std::string to_string(Engine engine) {
  switch (engine) {
    case Engine::qat: return "qat";
    case Engine::mebqat: return "mebqat";
    case Engine::mebqat_maml: return "mebqat-maml";
    case Engine::mebqat_pn: return "mebqat-pn";
  }
  return "?";
}

bool is_episodic(Engine engine) { return engine == Engine::mebqat_maml || engine == Engine::mebqat_pn; }

std::vector<std::pair<std::string, std::string>> config_schema() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.help);
  return out;
}

RunConfig RunConfig::from_values(const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    bool known = false;
    for (const auto& f : fields()) known = known || key == f.key;
    if (!known) throw ConfigError(key, "unknown key");
  }
  RunConfig c;
  auto& r = c.resolved;
  Lookup get = [&](const std::string& key) -> std::string {
    auto it = r.find(key);
    if (it == r.end()) throw std::logic_error("config default for '" + key + "' read before it was resolved");
    return it->second;
  };
  for (const auto& f : fields()) {
    auto it = values.find(f.key);
    if (it != values.end()) {
      r[f.key] = it->second;
      continue;
    }
    try {
      r[f.key] = f.fallback(get);
    } catch (const std::logic_error& e) {
      throw ConfigError(f.key, std::string("cannot derive default: ") + e.what());
    }
  }

  auto with = [&](const char* key, auto&& parse) {
    try {
      return parse(r.at(key));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key, e.what());
    }
  };
  auto size_of = [&](const char* key) { return to_size(key, r.at(key)); };
  auto real_of = [&](const char* key) { return to_double(key, r.at(key)); };
  auto bool_of = [&](const char* key) { return to_bool(key, r.at(key)); };
  auto positive = [&](const char* key) {
    const auto v = size_of(key);
    if (v == 0) throw ConfigError(key, "must be positive");
    return v;
  };

  c.engine = with("engine", [](const std::string& v) { return parse_engine(v); });
  c.seed = to_u64("seed", r.at("seed"));
  c.output_dir = r.at("output");
  if (c.output_dir.empty()) throw ConfigError("output", "must not be empty");
  c.model_kind = with("model.kind", [](const std::string& v) { return parse_model_kind(v); });

  c.data.source = r.at("data.source");
  if (c.data.source != "synthetic" && c.data.source != "idx") throw ConfigError("data.source", "expected synthetic or idx");
  c.data.train_images = r.at("data.train_images");
  c.data.train_labels = r.at("data.train_labels");
  c.data.test_images = r.at("data.test_images");
  c.data.test_labels = r.at("data.test_labels");
  if (c.data.source == "idx") {
    if (c.data.train_images.empty()) throw ConfigError("data.train_images", "required for the idx source");
    if (c.data.train_labels.empty()) throw ConfigError("data.train_labels", "required for the idx source");
  }
  c.data.synthetic.seed = to_u64("data.synthetic.seed", r.at("data.synthetic.seed"));
  c.data.synthetic.num_classes = positive("data.synthetic.classes");
  c.data.synthetic.samples_per_class = positive("data.synthetic.samples_per_class");
  c.data.test_samples_per_class = size_of("data.synthetic.test_samples_per_class");
  c.data.synthetic.image_size = size_of("data.synthetic.image_size");
  if (c.data.synthetic.image_size < 4) throw ConfigError("data.synthetic.image_size", "must be at least 4");
  c.data.synthetic.jitter = real_of("data.synthetic.jitter");
  c.data.synthetic.noise = real_of("data.synthetic.noise");
  if (c.data.synthetic.noise < 0) throw ConfigError("data.synthetic.noise", "must be non-negative");
  c.data.meta_train_classes = size_of("data.meta_train_classes");

  c.model_width = positive("model.width");

  c.tasks.weight_candidates = to_bitwidths("quant.weights", r.at("quant.weights"));
  c.tasks.activation_candidates = to_bitwidths("quant.activations", r.at("quant.activations"));
  c.tasks.minor_bitwidths = to_bitwidths("quant.minor", r.at("quant.minor"));
  c.tasks.tuples = to_tasks("quant.tuples", r.at("quant.tuples"));
  with("quant.weights", [&](const std::string&) {
    c.tasks.validate();
    return 0;
  });
  c.fix_first_fp = bool_of("quant.fix_first_fp");
  if (c.fix_first_fp && !c.tasks.contains_full_precision()) {
    throw ConfigError("quant.fix_first_fp", "requires (FP,FP) among the valid tasks");
  }
  c.policy.quantize_first_layer = bool_of("quant.quantize_first_layer");
  c.policy.quantize_last_layer = bool_of("quant.quantize_last_layer");
  c.qat_task = with("train.task", [](const std::string& v) { return BitwidthTask::parse(v); });
  if (c.qat_task.excluded()) throw ConfigError("train.task", "excluded pair " + c.qat_task.to_string());

  c.epochs = size_of("train.epochs");
  c.batch_size = positive("train.batch_size");
  c.branches = positive("train.branches");
  c.kd = bool_of("train.kd");

  c.optimizer.kind = with("optim.kind", [](const std::string& v) { return parse_optimizer_kind(v); });
  c.optimizer.learning_rate = real_of("optim.lr");
  if (!(c.optimizer.learning_rate >= 0)) throw ConfigError("optim.lr", "must be non-negative");
  c.optimizer.beta1 = real_of("optim.beta1");
  c.optimizer.beta2 = real_of("optim.beta2");
  c.optimizer.eps = real_of("optim.eps");
  c.optimizer.weight_decay = real_of("optim.weight_decay");

  c.schedule.kind = with("schedule.kind", [](const std::string& v) { return parse_schedule_kind(v); });
  c.schedule.base = c.optimizer.learning_rate;
  for (const auto& m : split(r.at("schedule.milestones"), ',')) c.schedule.milestones.push_back(to_size("schedule.milestones", m));
  c.schedule.factor = real_of("schedule.factor");
  c.schedule.t_max = size_of("schedule.t_max");
  with("schedule.kind", [&](const std::string&) {
    c.schedule.validate();
    return 0;
  });

  const auto ways = positive("episode.ways");
  const auto shots = positive("episode.shots");
  const auto queries = positive("episode.queries");
  const auto per_epoch = positive("episode.updates_per_epoch");
  if (r.at("maml.profile") != "") with("maml.profile", [](const std::string& v) { return maml_preset(v); });

  c.logging.every = size_of("metrics.log_every");
  c.logging.record_wall_time = bool_of("metrics.record_wall_time");

  c.maml.branches = c.branches;
  c.maml.inner_steps = positive("maml.inner_steps");
  c.maml.inner_rate = real_of("maml.inner_rate");
  c.maml.meta_test_steps = size_of("maml.meta_test_steps");
  c.maml.ways = ways;
  c.maml.shots = shots;
  c.maml.queries = queries;
  c.maml.updates_per_epoch = per_epoch;
  c.maml.tasks = c.tasks;
  c.maml.fix_first_fp = c.fix_first_fp;
  c.maml.policy = c.policy;
  c.maml.logging = c.logging;

  c.pn.branches = c.branches;
  c.pn.ways = ways;
  c.pn.shots = shots;
  c.pn.queries = queries;
  c.pn.updates_per_epoch = per_epoch;
  c.pn.tasks = c.tasks;
  c.pn.fix_first_fp = c.fix_first_fp;
  c.pn.policy = c.policy;
  c.pn.logging = c.logging;

  c.eval_episodes = positive("eval.episodes");
  c.eval_batch_size = positive("eval.batch_size");
  c.eval_tasks = to_tasks("eval.tasks", r.at("eval.tasks"));
  if (c.eval_tasks.empty()) {
    c.eval_tasks = c.tasks.valid_pairs();
    r["eval.tasks"] = join_tasks(c.eval_tasks);
  }

  if (is_episodic(c.engine)) {
    if (c.data.source == "synthetic" && c.data.meta_train_classes >= c.data.synthetic.num_classes) {
      throw ConfigError("data.meta_train_classes", "leaves no meta-test classes");
    }
    if (c.engine == Engine::mebqat_pn && c.model_kind != ModelKind::conv4_pn) {
      throw ConfigError("model.kind", "mebqat-pn needs the conv4-pn embedding network");
    }
    if (c.engine == Engine::mebqat_maml && c.model_width != ways) {
      throw ConfigError("model.width", "must equal episode.ways for mebqat-maml");
    }
  } else if (c.model_kind == ModelKind::conv4_pn) {
    throw ConfigError("model.kind", "conv4-pn has no classification head");
  }
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, value] : resolved) out += key + " = " + value + "\n";
  return out;
}

std::size_t RunConfig::episode_ways() const { return engine == Engine::mebqat_pn ? pn.ways : maml.ways; }
std::size_t RunConfig::episode_shots() const { return engine == Engine::mebqat_pn ? pn.shots : maml.shots; }
std::size_t RunConfig::episode_queries() const { return engine == Engine::mebqat_pn ? pn.queries : maml.queries; }

}  // namespace bitadapt
