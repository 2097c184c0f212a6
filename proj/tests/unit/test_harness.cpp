#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bitadapt/checkpoint.hpp"
#include "bitadapt/config.hpp"
#include "bitadapt/cost.hpp"
#include "bitadapt/errors.hpp"
#include "bitadapt/metrics.hpp"
#include "bitadapt/runner.hpp"

using namespace bitadapt;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = BITADAPT_FIXTURE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error_field(const std::map<std::string, std::string>& kv) {
  try {
    RunConfig::from_values(kv);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

CheckpointError::Kind checkpoint_kind(const std::vector<unsigned char>& bytes) {
  try {
    decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no CheckpointError";
  return CheckpointError::Kind::io;
}

std::map<std::string, std::string> tiny_run(const std::string& out) {
  return {{"engine", "mebqat"},
          {"seed", "5"},
          {"output", out},
          {"model.kind", "conv8-reduced"},
          {"data.synthetic.classes", "3"},
          {"data.synthetic.samples_per_class", "6"},
          {"data.synthetic.test_samples_per_class", "2"},
          {"data.synthetic.image_size", "8"},
          {"quant.weights", "2,4,FP"},
          {"quant.activations", "2,4,FP"},
          {"train.epochs", "2"},
          {"train.batch_size", "6"},
          {"train.branches", "3"}};
}

}  // namespace

TEST(Config, ParsesSectionsAndComments) {
  auto kv = parse_key_values("# top\nseed = 3\n[train]\nepochs = 7 # trailing\n\n[optim]\nlr=0.5\n");
  EXPECT_EQ(kv.at("seed"), "3");
  EXPECT_EQ(kv.at("train.epochs"), "7");
  EXPECT_EQ(kv.at("optim.lr"), "0.5");
  EXPECT_THROW(parse_key_values("no equals sign\n"), ConfigError);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(config_error_field({{"engine", "bogus"}}), "engine");
  EXPECT_EQ(config_error_field({{"train.epochs", "-1"}}), "train.epochs");
  EXPECT_EQ(config_error_field({{"optim.lr", "fast"}}), "optim.lr");
  EXPECT_EQ(config_error_field({{"quant.weights", "2,17"}}), "quant.weights");
  EXPECT_EQ(config_error_field({{"no.such.key", "1"}}), "no.such.key");
  EXPECT_EQ(config_error_field({{"train.branches", "0"}}), "train.branches");
  try {
    RunConfig::from_values({{"engine", "bogus"}});
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("config field 'engine'"), std::string::npos);
  }
}

TEST(Config, ResolvedEchoRoundTrips) {
  auto cfg = RunConfig::from_values({{"seed", "9"}, {"train.epochs", "3"}});
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.epochs, 3u);
  const auto text = cfg.to_text();
  EXPECT_NE(text.find("seed = 9"), std::string::npos);
  auto again = RunConfig::from_values(parse_key_values(text));
  EXPECT_EQ(again.to_text(), text);
  // every documented key appears in the echo
  for (const auto& [key, doc] : config_schema()) EXPECT_TRUE(cfg.resolved.contains(key)) << key;
}

TEST(Checkpoint, RoundTripIsExact) {
  auto spec = build_model(ModelKind::conv5_maml, 4, {1, 8, 8});
  Rng rng(1);
  auto p = init_params(spec, rng);
  CheckpointMeta meta{"conv5-maml", 4, {1, 8, 8}, 12, "abc|def"};
  auto bytes = encode_checkpoint(p, meta);
  auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.meta.model_kind, "conv5-maml");
  EXPECT_EQ(back.meta.epoch, 12u);
  EXPECT_EQ(back.meta.rng_state, "abc|def");
  EXPECT_EQ(back.meta.input_shape, (Shape{1, 8, 8}));
  EXPECT_EQ(back.payload_bytes, 4 * spec.parameter_count());
  ASSERT_EQ(back.params.size(), p.size());
  for (const auto& [n, t] : p) {
    auto a = t.data();
    auto b = back.params.at(n).data();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << n;
  }
  EXPECT_EQ(encode_checkpoint(back.params, back.meta), bytes);
  auto rebuilt = checkpoint_model(back);
  EXPECT_EQ(rebuilt.parameter_count(), spec.parameter_count());
}

TEST(Checkpoint, Errors) {
  auto bytes = encode_checkpoint({{"w", Tensor::from_data({2}, {1.f, 2.f})}}, {});
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(checkpoint_kind(bad), CheckpointError::Kind::bad_magic);
  auto ver = bytes;
  ver[4] = 99;
  EXPECT_EQ(checkpoint_kind(ver), CheckpointError::Kind::unsupported_version);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_EQ(checkpoint_kind(cut), CheckpointError::Kind::truncated);
  EXPECT_EQ(checkpoint_kind({'M', 'B'}), CheckpointError::Kind::truncated);
  EXPECT_THROW(read_checkpoint("/nonexistent/x.mbqt"), CheckpointError);
}

TEST(Checkpoint, EmptyTableIsValid) {
  auto back = decode_checkpoint(encode_checkpoint({}, {}));
  EXPECT_TRUE(back.params.empty());
  EXPECT_EQ(back.payload_bytes, 0u);
}

TEST(Metrics, GoldenRow) {
  MetricRow r;
  r.epoch = 3;
  r.branch = 1;
  r.loss = 0.6931471805599453;
  r.accuracy = 0.5;
  r.backprops = 1;
  std::ostringstream out;
  write_metrics(out, std::vector<MetricRow>{r});
  EXPECT_EQ(out.str(), slurp(kFixtures / "metrics_one_row.csv"));
}

TEST(Metrics, EmptyIsHeaderOnly) {
  std::ostringstream out;
  write_metrics(out, std::vector<MetricRow>{});
  EXPECT_EQ(out.str(), std::string(kMetricsHeader) + "\n");
}

TEST(Cost, SingleParameterSet) {
  auto spec = build_model(ModelKind::conv8_reduced, 10, {1, 16, 16});
  Rng rng(2);
  auto p = init_params(spec, rng);
  auto ckpt = decode_checkpoint(encode_checkpoint(p, {"conv8-reduced", 10, {1, 16, 16}, 0, ""}));
  const auto tasks = BitwidthTaskSet::uniform({Bitwidth::bits(2), Bitwidth::bits(4), Bitwidth::fp()});
  auto rep = describe_cost(spec, ckpt, tasks, 4);
  EXPECT_EQ(rep.parameter_sets, 1u);
  EXPECT_EQ(rep.pairs, 9u);
  EXPECT_EQ(rep.storage_bytes, 4 * spec.parameter_count());
  EXPECT_NEAR(rep.bn_fraction,
              static_cast<double>(spec.batch_norm_parameter_count()) / static_cast<double>(spec.parameter_count()),
              1e-12);
  // a second copy of any tensor is rejected
  auto doubled = ckpt;
  doubled.params.emplace("copy.conv1.weight", p.at("conv1.weight").clone());
  EXPECT_THROW(describe_cost(spec, doubled, tasks, 4), CheckpointError);
}

TEST(Runner, TrainIsReproducible) {
  const auto a = fs::temp_directory_path() / "bitadapt_run_a";
  const auto b = fs::temp_directory_path() / "bitadapt_run_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run_train(RunConfig::from_values(tiny_run(a.string())));
  run_train(RunConfig::from_values(tiny_run(b.string())));
  for (const char* f : {"metrics.csv", "checkpoint.mbqt"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  ASSERT_TRUE(fs::exists(a / "config.resolved"));
  EXPECT_EQ(slurp(a / "config.resolved"), RunConfig::from_values(tiny_run(a.string())).to_text());
  auto cfg = RunConfig::from_values(tiny_run(a.string()));
  auto ckpt = read_checkpoint(a / "checkpoint.mbqt");
  EXPECT_EQ(ckpt.meta.epoch, 2u);
  auto rows = run_eval(cfg, ckpt, {BitwidthTask::full_precision(), {Bitwidth::bits(2), Bitwidth::bits(2)}});
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
  }
  auto cost = run_report_cost(cfg, ckpt);
  EXPECT_EQ(cost.backprops_per_update, 3.0);
  EXPECT_EQ(cost.parameter_sets, 1u);
}

TEST(Runner, MetaEvalRequiresEpisodicEngine) {
  auto kv = tiny_run((fs::temp_directory_path() / "bitadapt_run_c").string());
  auto cfg = RunConfig::from_values(kv);
  EXPECT_THROW(run_meta_eval(cfg, Checkpoint{}, {}, 1), ConfigError);
}
