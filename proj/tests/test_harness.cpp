#include "motiongrpo/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mgrpo;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::vector<std::string> tiny_overrides() {
  return {"data.count=20",      "data.frames=8",      "denoiser.hidden=[16]", "pretrain.steps=20",
          "pretrain.batch=8",   "scorer.latent=8",    "scorer.blocks=1",      "scorer.steps=4",
          "grpo.group_size=4",  "grpo.batch_size=2",  "grpo.iterations=2",    "study.groups=2",
          "study.seeds=1",      "threads=2"};
}

struct HarnessTest : ::testing::Test {
  fs::path dir;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("mgrpo_harness_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  RunContext context(std::vector<std::string> extra = {}) const {
    auto o = tiny_overrides();
    o.insert(o.end(), extra.begin(), extra.end());
    return RunContext{load_config(std::nullopt, o), dir};
  }
};

}  // namespace

TEST(Config, DefaultsMirrorReferenceHyperparameters) {
  const ExperimentConfig c;
  EXPECT_EQ(c.grpo.group_size, 16u);
  EXPECT_EQ(c.grpo.perlin_lambda, 0.1);
  EXPECT_EQ(c.scorer.temperature, 0.07);
  EXPECT_EQ(c.scorer.negatives, 15u);
  EXPECT_EQ(c.rewards.vis, 1.0);
  EXPECT_EQ(c.rewards.pos_aligned, 0.5);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, OverridesByDottedPath) {
  const ExperimentConfig c = load_config(std::nullopt, {"grpo.lambda=0.05", "eval.split=val", "threads=3"}, 9);
  EXPECT_EQ(c.grpo.perlin_lambda, 0.05);
  EXPECT_EQ(c.eval.split, "val");
  EXPECT_EQ(c.threads, 3u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_THROW(load_config(std::nullopt, {"grpo.nonexistent=1"}), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {"grpo=1"}), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {"novalue"}), ConfigError);
  EXPECT_THROW(load_config(std::nullopt, {"data.fractions=[0.5,0.1,0.1]"}), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  const ExperimentConfig c = load_config(std::nullopt, {"grpo.learning_rate=2e-6", "study.lambdas=[0,0.2]"});
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_NE(config_hash(c), config_hash(ExperimentConfig{}));
}

TEST_F(HarnessTest, GenDataWritesOneLinePerRecord) {
  const RunContext ctx = context({"data.count=100"});
  const GenDataResult r = cmd_gen_data(ctx);
  EXPECT_EQ(r.records, 100u);
  EXPECT_EQ(line_count(r.path), 100u);
  const std::string first = slurp(r.path);
  cmd_gen_data(ctx);
  EXPECT_EQ(slurp(r.path), first);
  EXPECT_TRUE(fs::exists(meta_path(r.path)));
}

TEST_F(HarnessTest, PretrainZeroStepsWritesInitialWeights) {
  const RunContext ctx = context({"pretrain.steps=0"});
  cmd_gen_data(ctx);
  const PretrainResult r = cmd_pretrain(ctx);
  EXPECT_TRUE(r.losses.empty());
  Rng init = ctx.rng("denoiser-init");
  Denoiser fresh(8, 8, {16}, &init);
  EXPECT_EQ(read_checkpoint(r.checkpoint).weights, fresh.to_checkpoint().weights);
  EXPECT_EQ(slurp(dir / "pretrain_loss.csv"), std::string(kLossCsvHeader) + "\n");
}

TEST_F(HarnessTest, PretrainResumeContinuesLossLevel) {
  const RunContext first = context({"pretrain.steps=40"});
  cmd_gen_data(first);
  const PretrainResult a = cmd_pretrain(first);
  ASSERT_EQ(a.losses.size(), 40u);
  const RunContext second = context({"pretrain.steps=60", "pretrain.resume=true"});
  const PretrainResult b = cmd_pretrain(second);
  ASSERT_EQ(b.first_step, 40u);
  ASSERT_EQ(b.losses.size(), 20u);
  EXPECT_LT(b.losses.front(), 2.0 * a.losses.back());
  EXPECT_EQ(line_count(dir / "pretrain_loss.csv"), 61u);

  // Straight-through run gives the same weights as stopping and resuming.
  const fs::path resumed = dir / "resumed.mgrp";
  fs::copy_file(b.checkpoint, resumed);
  cmd_pretrain(context({"pretrain.steps=60"}));
  EXPECT_EQ(read_checkpoint(resumed.string()).weights, read_checkpoint(b.checkpoint).weights);
}

TEST_F(HarnessTest, ResumeUnderDifferentConfigIsRefused) {
  const RunContext ctx = context();
  cmd_gen_data(ctx);
  cmd_pretrain(ctx);
  EXPECT_THROW(cmd_pretrain(context({"pretrain.resume=true", "pretrain.learning_rate=0.01", "pretrain.steps=30"})),
               ConfigError);
}

TEST_F(HarnessTest, StaleArtifactsAreRefused) {
  const RunContext ctx = context();
  cmd_gen_data(ctx);
  cmd_pretrain(ctx);
  // Different data seed: the dataset on disk no longer matches.
  const RunContext other{load_config(std::nullopt, tiny_overrides(), 2), dir};
  EXPECT_THROW(cmd_pretrain(other), ConfigError);
  // Different pretrain budget: the denoiser on disk no longer matches.
  EXPECT_THROW(cmd_train_scorer(context({"pretrain.steps=21"})), ConfigError);
}

TEST_F(HarnessTest, GrpoZeroIterationsCopiesDenoiser) {
  const RunContext ctx = context({"grpo.iterations=0"});
  cmd_gen_data(ctx);
  cmd_pretrain(ctx);
  cmd_train_scorer(ctx);
  const GrpoResult r = cmd_grpo(ctx);
  EXPECT_TRUE(r.logs.empty());
  EXPECT_EQ(slurp(r.checkpoint), slurp(ctx.denoiser_path()));
  EXPECT_EQ(slurp(dir / "grpo_iterations.csv"), std::string(kIterationCsvHeader) + "\n");
}

TEST_F(HarnessTest, FullPipelineProducesDeclaredFiles) {
  const RunContext ctx = context();
  cmd_gen_data(ctx);
  cmd_pretrain(ctx);
  const TrainScorerResult s = cmd_train_scorer(ctx);
  EXPECT_EQ(s.losses.size(), 4u);
  const GrpoResult g = cmd_grpo(ctx);
  ASSERT_EQ(g.logs.size(), 2u);
  const std::string csv = slurp(dir / "grpo_iterations.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kIterationCsvHeader);
  EXPECT_EQ(line_count(dir / "grpo_iterations.csv"), 3u);

  const EvalResult e = cmd_eval(ctx);
  EXPECT_EQ(e.label, "policy");
  const std::string report = slurp(dir / "eval_policy.csv");
  EXPECT_EQ(report.substr(0, report.find('\n')), EvalReport::kHeader);
  EXPECT_GT(e.report.mpjpe, 0.0);

  const StudyResult st = cmd_diversity_study(context({"study.lambdas=[0]"}));
  ASSERT_EQ(st.per_seed.size(), 1u);
  ASSERT_EQ(st.per_seed[0].size(), 1u);
  EXPECT_GE(st.per_seed[0][0].mean_diversity, 0.0);
  EXPECT_EQ(line_count(dir / "diversity_study.csv"), 2u);
}

TEST_F(HarnessTest, OracleEvalIsExact) {
  const RunContext ctx = context({"eval.oracle=true"});
  cmd_gen_data(ctx);
  const EvalResult e = cmd_eval(ctx);
  EXPECT_EQ(e.label, "oracle");
  EXPECT_EQ(e.report.mpjpe, 0.0);
  EXPECT_LT(e.report.pa_mpjpe, 1e-6);
  EXPECT_EQ(e.report.mpjve, 0.0);
  EXPECT_EQ(e.report.mpjre, 0.0);
  EXPECT_EQ(e.report.gp, 0.0);
}

TEST_F(HarnessTest, ManifestRecordsConfig) {
  const RunContext ctx = context();
  write_manifest(ctx, "gen-data", 0.5, {"x"});
  const auto m = nlohmann::json::parse(slurp(dir / "manifest_gen-data.json"));
  EXPECT_EQ(m["config_hash"], config_hash(ctx.config));
  EXPECT_EQ(m["versions"]["motiongrpo"], kVersion);
  EXPECT_TRUE(m.contains("wall_time_seconds"));
  const auto c = nlohmann::json::parse(slurp(dir / "config_gen-data.json"));
  EXPECT_EQ(c.dump(), config_to_json(ctx.config).dump());
}

#ifdef MGRPO_CLI
TEST_F(HarnessTest, CliExitCodes) {
  const std::string cli = MGRPO_CLI;
  const std::string out = " --out " + dir.string() + " > /dev/null 2>&1";
  EXPECT_EQ(std::system((cli + " gen-data --set data.count=5 --set data.frames=8" + out).c_str()), 0);
  EXPECT_EQ(line_count(dir / "dataset.jsonl"), 5u);
  EXPECT_NE(std::system((cli + " gen-data --set data.fractions=[0.5,0.1,0.1]" + out).c_str()), 0);
  EXPECT_NE(std::system((cli + " pretrain --set data.count=6 --set data.frames=8" + out).c_str()), 0);
  EXPECT_NE(std::system((cli + " --bogus" + out).c_str()), 0);
}
#endif
