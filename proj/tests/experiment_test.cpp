#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "grcn/error.hpp"
#include "grcn/experiment.hpp"

namespace grcn {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("grcn_experiment_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small enough to train in a second or two.
const char* kTiny = R"(
seed = 5
data.canvas = 32
data.frames = 6
data.sizes = 3,5
data.train = 32
data.val = 8
data.test = 16
input.size = 8
input.frames = 4
train.crop_ladder = 32,28
train.epochs = 2
train.batch = 8
model.hidden = 3,4
model.backbone.channels = 3,4
eval.subvolumes = 2
)";

ExperimentConfig tiny(const fs::path& out, const std::string& extra = "") {
  FlatConfig f = FlatConfig::parse(std::string(kTiny) + extra);
  f.set("out", out.string());
  return experiment_config(f);
}

std::string config_error_key(const std::string& text) {
  try {
    experiment_config(FlatConfig::parse(text));
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<none>";
}

// ---------------------------------------------------------------- flat config

TEST(FlatConfig, ParsesCommentsWhitespaceAndOverrides) {
  const auto f = FlatConfig::parse("# header\n a.b = 1 # trailing\n\nc=x, y\na.b=2\n");
  EXPECT_EQ(f.entries().size(), 2u);
  EXPECT_EQ(f.get_size("a.b", 0), 2u);
  EXPECT_EQ(f.get_list("c", {}), (std::vector<std::string>{"x", "y"}));
  EXPECT_EQ(f.get_string("missing", "d"), "d");
}

TEST(FlatConfig, MalformedLinesAndValues) {
  EXPECT_THROW(FlatConfig::parse("novalue\n"), ConfigError);
  EXPECT_THROW(FlatConfig::parse("= 3\n"), ConfigError);
  const auto f = FlatConfig::parse("n = 3x\nb = maybe\nd = 1e999\n");
  EXPECT_THROW(f.get_size("n", 0), ConfigError);
  EXPECT_THROW(f.get_bool("b", false), ConfigError);
  EXPECT_THROW(f.get_double("d", 0.0), ConfigError);
  EXPECT_THROW(FlatConfig::load("/nonexistent/config.cfg"), ConfigError);
}

TEST(ExperimentConfig, ErrorsNameTheOffendingKey) {
  EXPECT_EQ(config_error_key("model.architectur = gru_rcn\n"), "model.architectur");
  EXPECT_EQ(config_error_key("model.architecture = lstm\n"), "model.architecture");
  EXPECT_EQ(config_error_key("train.batch = 0\n"), "train.batch");
  EXPECT_EQ(config_error_key("train.epochs = -1\n"), "train.epochs");
  EXPECT_EQ(config_error_key("data.border = reflect\n"), "data.border");
  EXPECT_EQ(config_error_key("model.dropout = 1.5\n"), "model.dropout");
  EXPECT_EQ(config_error_key("compare.architectures = gru_rcn, rnn\n"), "compare.architectures");
}

TEST(ExperimentConfig, SeedMustBeExplicit) {
  const auto c = experiment_config(FlatConfig::parse("model.hidden = 4\nmodel.backbone.channels = 4\n"));
  EXPECT_FALSE(c.seed.has_value());
  try {
    c.require_seed();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "seed");
  }
}

TEST(ExperimentConfig, SharedInputSettings) {
  const auto c = tiny(scratch("shared"));
  EXPECT_EQ(c.model.backbone.height, 8u);
  EXPECT_EQ(c.train.crop.out_h, 8u);
  EXPECT_EQ(c.eval.out, 8u);
  EXPECT_EQ(c.train.crop.t_crop, 4u);
  EXPECT_EQ(c.eval.t_crop, 4u);
  EXPECT_EQ(c.train.validation.t_crop, 4u);
  EXPECT_EQ(c.entries.count("out"), 0u);
}

TEST(ExperimentConfig, MissingDatasetPath) {
  auto c = tiny(scratch("missing"), "data.path = /nonexistent/dataset\n");
  try {
    load_or_generate(c, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "data.path");
  }
}

TEST(ExperimentConfig, CropLargerThanCanvas) {
  auto c = tiny(scratch("crop"), "train.crop_ladder = 40\n");
  EXPECT_THROW(run_train(c), ConfigError);
}

// ---------------------------------------------------------------- describe

TEST(Describe, PointwiseSingleLevel) {
  const auto s = summarize_levels({{"l", 1, 1, 1, 1}}, 1, 1, true);
  EXPECT_EQ(s[0].parameters, 9u);  // 6 weights + 3 biases
  EXPECT_EQ(summarize_levels({{"l", 1, 1, 1, 1}}, 1, 1, false)[0].parameters, 6u);

  ModelConfig m;
  m.backbone.height = m.backbone.width = 2;
  m.backbone.channels = {1};
  m.backbone.pool = {2};
  m.backbone.levels = 1;
  m.hidden = {1};
  m.kernel = 1;
  m.classes = 2;
  const auto j = describe_json(zero_model(m), 3);
  ASSERT_EQ(j["levels"].size(), 1u);
  EXPECT_EQ(j["levels"][0]["percept"], "1x1x1");
  EXPECT_EQ(j["levels"][0]["recurrence_parameters"], 9u);
  EXPECT_EQ(j["parameter_groups"][0]["name"], "level0.fwd");
  EXPECT_EQ(j["parameter_groups"][0]["parameters"], 9u);
}

// VGG-16 maps for a 224 x 224 input (pool2 .. pool5 and fc-7) with the
// recurrent widths 64, 128, 256, 256, 512. Counts by hand from
// 9 * 3 * (Ox Oh + Oh Oh).
TEST(Describe, FiveLevelWidths) {
  const std::vector<LevelDims> levels{{"pool2", 56, 56, 128, 64},
                                      {"pool3", 28, 28, 256, 128},
                                      {"pool4", 14, 14, 512, 256},
                                      {"pool5", 7, 7, 512, 256},
                                      {"fc7", 1, 1, 4096, 512}};
  const std::size_t expected[] = {331776, 1327104, 5308416, 5308416, 63700992};
  const auto s = summarize_levels(levels, 3, 10, false);
  for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(s[l].parameters, expected[l]) << levels[l].name;
  // 3 T N1 N2 k1 k2 (Ox Oh + Oh Oh) for pool2, T = 10
  EXPECT_DOUBLE_EQ(s[0].conv_multiplications, 3.0 * 10 * 56 * 56 * 9 * 12288);
  EXPECT_DOUBLE_EQ(s[0].fc_multiplications, 3.0 * 10 * 3136.0 * 3136.0 * 12288);
}

TEST(Describe, ConvolutionalEstimateIsSmallerForLargerMaps) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const LevelDims d{"l", 1 + rng.below(20), 1 + rng.below(20), 1 + rng.below(64), 1 + rng.below(64)};
    const std::size_t k = 1 + 2 * rng.below(3);
    const double conv = conv_recurrence_estimate(d, k, 5), fc = fc_recurrence_estimate(d, 5);
    if (d.n1 * d.n2 > k * k) EXPECT_LT(conv, fc);
    if (d.n1 * d.n2 == k * k) EXPECT_EQ(conv, fc);
  }
}

TEST(Describe, GroupsAddUpToTheTotal) {
  for (auto arch : {Architecture::gru_rcn, Architecture::stacked_gru_rcn, Architecture::bidir_gru_rcn,
                    Architecture::fc_gru_baseline}) {
    auto c = tiny(scratch("groups"));
    const Model m = zero_model(model_for(c, c.data, arch, Stream::rgb));
    const auto j = describe_json(m, 4);
    std::size_t sum = 0;
    for (const auto& g : j["parameter_groups"]) sum += g["parameters"].get<std::size_t>();
    EXPECT_EQ(sum, total_parameters(m.params)) << to_string(arch);
    EXPECT_EQ(j["total_parameters"], total_parameters(m.params));
    const std::string text = describe_text(m, 4);
    EXPECT_NE(text.find("total  " + std::to_string(total_parameters(m.params))), std::string::npos);
    if (arch != Architecture::fc_gru_baseline) EXPECT_NE(text.find("estimate"), std::string::npos);
  }
}

// ---------------------------------------------------------------- runs

TEST(Run, UntrainedModelIsNearChance) {
  const auto out = scratch("untrained");
  auto c = tiny(out, "train.epochs = 0\ndata.test = 400\n");
  const Report r = run_train(c);
  ASSERT_EQ(r.runs.size(), 1u);
  EXPECT_EQ(r.runs[0].log.epochs.size(), 0u);
  EXPECT_NEAR(r.runs[0].test.accuracy, 1.0 / 8.0, 0.08);
  EXPECT_TRUE(fs::exists(out / "metrics.json"));
  EXPECT_TRUE(fs::exists(out / "checkpoint" / "params.grcn"));
}

TEST(Run, SameConfigAndSeedGiveIdenticalFiles) {
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_train(tiny(a));
  run_train(tiny(b));
  for (const char* f : {"metrics.json", "checkpoint/checkpoint.json", "checkpoint/params.grcn"}) {
    EXPECT_FALSE(bytes(a / f).empty()) << f;
    EXPECT_EQ(bytes(a / f), bytes(b / f)) << f;
  }
  const auto c = scratch("det_c");
  run_train(tiny(c, "seed = 6\n"));
  EXPECT_NE(bytes(a / "checkpoint/params.grcn"), bytes(c / "checkpoint/params.grcn"));
}

TEST(Run, MetricsAreRecomputableFromTheCheckpoint) {
  const auto out = scratch("recompute");
  const auto c = tiny(out);
  const Report r = run_train(c);
  const Model m = load_checkpoint(out / "checkpoint");
  const Dataset d = load_or_generate(c, *c.seed);
  const EvalResult e = evaluate_model(m, d.test, c.eval);
  EXPECT_EQ(e.accuracy, r.runs[0].test.accuracy);
  EXPECT_EQ(e.confusion, r.runs[0].test.confusion);

  const auto j = nlohmann::json::parse(bytes(out / "metrics.json"));
  EXPECT_EQ(j["format"], "grcn-metrics");
  EXPECT_EQ(j["version"], 1);
  const auto& run = j["runs"][0];
  EXPECT_EQ(run["test_accuracy"].get<double>(), r.runs[0].test.accuracy);
  EXPECT_EQ(run["parameters"].get<std::size_t>(), total_parameters(m.params));
  EXPECT_EQ(run["epochs"], 2);
  EXPECT_TRUE(fs::exists(out / run["trainlog"].get<std::string>()));
  EXPECT_TRUE(fs::exists(out / run["checkpoint"].get<std::string>()));
  for (double a : run["per_class_accuracy"]) EXPECT_TRUE(a >= 0.0 && a <= 1.0);
  EXPECT_EQ(j["class_names"].size(), 8u);
}

TEST(Run, CompareReportsEveryArchitectureAndTheFusion) {
  const auto out = scratch("compare");
  const auto c = tiny(out, "train.epochs = 1\ncompare.seeds = 1,2\ncompare.fusion = true\n");
  const Report r = run_compare(c);
  // three architectures plus the framediff stream, per seed
  ASSERT_EQ(r.runs.size(), 8u);
  ASSERT_EQ(r.fusions.size(), 2u);
  const auto j = nlohmann::json::parse(bytes(out / "metrics.json"));
  ASSERT_EQ(j["summary"].size(), 5u);
  EXPECT_EQ(j["summary"][0]["architecture"], "fc_gru_baseline");
  EXPECT_EQ(j["summary"][1]["architecture"], "gru_rcn");
  EXPECT_EQ(j["summary"][2]["architecture"], "bidir_gru_rcn");
  EXPECT_EQ(j["summary"][3]["stream"], "framediff");
  EXPECT_EQ(j["summary"][4]["stream"], "fused");
  for (const auto& s : j["summary"]) EXPECT_EQ(s["runs"], 2);
  EXPECT_DOUBLE_EQ(j["summary"][1]["mean_test_accuracy"].get<double>(),
                   mean_accuracy(r, Architecture::gru_rcn, Stream::rgb));
  for (const auto& run : j["runs"]) EXPECT_TRUE(fs::exists(out / run["checkpoint"].get<std::string>() / "params.grcn"));
}

TEST(Run, FusionOfIdenticalScoresKeepsThePrediction) {
  RunResult a;
  a.seed = 1;
  a.model.config.architecture = Architecture::gru_rcn;
  a.test.scores = {Tensor({3}, {0.2, 0.5, 0.3}), Tensor({3}, {0.6, 0.1, 0.3})};
  const auto f = fuse_runs(a, a, {1, 2}, 3, 1.0, 2.0);
  EXPECT_DOUBLE_EQ(f.test.accuracy, 0.5);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(f.test.scores[i].data()[k], a.test.scores[i].data()[k], 1e-15);
}

// ---------------------------------------------------------------- command line

#ifdef GRCN_CLI
int cli(const std::string& args) {
  const int status = std::system((std::string(GRCN_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("grcn_cli_test_" + name + ".cfg");
  std::ofstream(p) << text;
  return p;
}

TEST(Cli, ExitCodes) {
  const auto good = write_config("good", kTiny);
  const auto out = scratch("cli");
  EXPECT_EQ(cli("describe --config " + good.string()), 0);
  EXPECT_EQ(cli("train --config " + good.string() + " --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out / "metrics.json"));
  EXPECT_EQ(cli("evaluate --config " + good.string() + " --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out / "evaluation.json"));
  EXPECT_EQ(cli("generate --config " + good.string() + " --out " + (out / "data").string()), 0);
  EXPECT_TRUE(fs::exists(out / "data" / "manifest.json"));

  EXPECT_EQ(cli("train --config " + write_config("unknown", std::string(kTiny) + "bogus = 1\n").string()), 2);
  EXPECT_EQ(cli("train --config " + write_config("noseed", "model.hidden = 4\nmodel.backbone.channels = 4\n").string()), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("train --config /nonexistent.cfg"), 2);
  // a checker that cannot be satisfied counts as a numerical failure
  EXPECT_EQ(cli("gradcheck --config " + write_config("strict", std::string(kTiny) + "gradcheck.tolerance = 1e-300\n").string()),
            3);
}

TEST(Cli, SeedFlagOverridesTheConfig) {
  const auto cfg = write_config("seeded", kTiny);
  const auto a = scratch("cli_seed_a"), b = scratch("cli_seed_b");
  EXPECT_EQ(cli("train --config " + cfg.string() + " --seed 5 --out " + a.string()), 0);
  EXPECT_EQ(cli("train --config " + cfg.string() + " --seed 9 --out " + b.string()), 0);
  const auto ja = nlohmann::json::parse(bytes(a / "metrics.json"));
  const auto jb = nlohmann::json::parse(bytes(b / "metrics.json"));
  EXPECT_EQ(ja["config"]["seed"], "5");
  EXPECT_EQ(jb["config"]["seed"], "9");
  EXPECT_NE(bytes(a / "checkpoint/params.grcn"), bytes(b / "checkpoint/params.grcn"));
}
#endif

}  // namespace
}  // namespace grcn
