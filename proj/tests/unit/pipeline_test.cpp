#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <nlohmann/json.hpp>

#include "synthcurate/alignment.hpp"
#include "synthcurate/errors.hpp"
#include "synthcurate/fixtures.hpp"
#include "synthcurate/journal.hpp"
#include "synthcurate/judge.hpp"
#include "synthcurate/packaging.hpp"
#include "synthcurate/pipeline.hpp"
#include "test_support.hpp"

namespace sc = synthcurate;
namespace fs = std::filesystem;
using sc::testing::CountingImageGen;
using sc::testing::slurp;
using sc::testing::TempDir;

namespace {

sc::FixtureOptions small_fixture() {
  sc::FixtureOptions o;
  o.count = 300;
  o.image_size = 16;
  o.top_k = 30;
  return o;
}

sc::PipelineConfig config_in(const sc::Fixture& fx, const fs::path& workdir) {
  sc::ConfigOverrides ov;
  ov.workdir = workdir;
  return sc::load_config(fx.config, ov);
}

int cli(const std::string& args) {
  const auto cmd = std::string(SYNTHCURATE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(Pipeline, RunProducesManifestAndReport) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  auto gen = std::make_shared<CountingImageGen>();
  sc::Pipeline p(config_in(fx, dir / "work"), {nullptr, gen, nullptr});
  const auto outcomes = p.run();
  ASSERT_EQ(outcomes.size(), 7u);
  for (const auto& o : outcomes) EXPECT_FALSE(o.skipped) << o.stage;
  const auto manifest = sc::read_manifest(p.config().image_root() / sc::kManifestFile);
  EXPECT_EQ(manifest.entries.size(), 30u);
  EXPECT_TRUE(fs::exists(p.artifact("report/report.txt")));
  EXPECT_GT(gen->calls.load(), 30u);
  const auto prov = nlohmann::json::parse(slurp(p.artifact(sc::artifacts::kProvenance)));
  EXPECT_TRUE(prov.at("ok").get<bool>());
}

TEST(Pipeline, SecondRunMakesNoGenerationCalls) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  const auto cfg = config_in(fx, dir / "work");
  {
    sc::Pipeline p(cfg);
    p.run();
  }
  const auto manifest = slurp(cfg.image_root() / sc::kManifestFile);
  auto gen = std::make_shared<CountingImageGen>();
  sc::Pipeline p(cfg, {nullptr, gen, nullptr});
  for (const auto& o : p.run()) EXPECT_TRUE(o.skipped) << o.stage;
  EXPECT_EQ(gen->calls.load(), 0u);
  // Re-running generate by hand is also free: the journal says everything is done.
  p.generate();
  EXPECT_EQ(gen->calls.load(), 0u);
  EXPECT_EQ(slurp(cfg.image_root() / sc::kManifestFile), manifest);
}

TEST(Pipeline, RunMatchesManualStages) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  {
    sc::Pipeline p(config_in(fx, dir / "a"));
    p.run();
  }
  {
    sc::Pipeline p(config_in(fx, dir / "b"));
    for (auto stage : sc::kStageNames) p.run_stage(stage);
  }
  const auto fa = files_under(dir / "a");
  ASSERT_EQ(fa, files_under(dir / "b"));
  for (const auto& f : fa) {
    // Journal lines carry wall-clock timestamps; compare their replayed views.
    if (f == sc::artifacts::kJournal) {
      EXPECT_EQ(sc::resume_view(dir / "a" / f), sc::resume_view(dir / "b" / f));
      continue;
    }
    // Stamps hash the journal bytes, so they differ along with it.
    if (f.string().starts_with(sc::artifacts::kStampDir)) continue;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Pipeline, ChangedSelectionRerunsOnlyDownstream) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  auto cfg = config_in(fx, dir / "work");
  {
    sc::Pipeline p(cfg);
    p.run();
  }
  cfg.selection.top_k = 20;
  auto gen = std::make_shared<CountingImageGen>();
  sc::Pipeline p(cfg, {nullptr, gen, nullptr});
  const auto outcomes = p.run();
  std::map<std::string, bool> skipped;
  for (const auto& o : outcomes) skipped[o.stage] = o.skipped;
  EXPECT_TRUE(skipped["ingest"]);
  EXPECT_TRUE(skipped["curate"]);
  EXPECT_TRUE(skipped["generate"]);
  EXPECT_TRUE(skipped["score"]);
  EXPECT_FALSE(skipped["select"]);
  EXPECT_FALSE(skipped["package"]);
  EXPECT_FALSE(skipped["report"]);
  EXPECT_EQ(gen->calls.load(), 0u);
  EXPECT_EQ(sc::read_manifest(cfg.image_root() / sc::kManifestFile).entries.size(), 20u);
}

TEST(Pipeline, NewSeedRegeneratesEverything) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  auto cfg = config_in(fx, dir / "work");
  {
    sc::Pipeline p(cfg);
    p.run();
  }
  const auto candidates = sc::read_captions(dir / "work" / sc::artifacts::kCandidates).size();
  cfg.generation.global_seed += 1;
  auto gen = std::make_shared<CountingImageGen>();
  sc::Pipeline p(cfg, {nullptr, gen, nullptr});
  p.run();
  EXPECT_EQ(gen->calls.load(), candidates);
}

TEST(Pipeline, IdenticalConfigsGiveIdenticalManifests) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  std::string manifests[2];
  for (int i = 0; i < 2; ++i) {
    const auto cfg = config_in(fx, dir / ("w" + std::to_string(i)));
    sc::Pipeline p(cfg);
    p.run();
    manifests[i] = slurp(cfg.image_root() / sc::kManifestFile);
  }
  EXPECT_EQ(manifests[0], manifests[1]);
}

TEST(Pipeline, MissingPrerequisiteNamesProducer) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  sc::Pipeline p(config_in(fx, dir / "work"));
  try {
    p.score();
    FAIL();
  } catch (const sc::MissingArtifact& e) {
    EXPECT_EQ(e.producer(), "curate");
    EXPECT_NE(std::string(e.what()).find(sc::artifacts::kCandidates), std::string::npos);
  }
}

TEST(Pipeline, WorkdirLockRejectsSecondWriter) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  const auto cfg = config_in(fx, dir / "work");
  sc::Pipeline first(cfg);
  EXPECT_THROW(sc::Pipeline second(cfg), sc::Error);
  EXPECT_EQ(cli("ingest --config " + fx.config.string() + " --workdir " + (dir / "work").string()), 1);
}

TEST(Pipeline, SelectBeyondAvailablePairsFails) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  auto cfg = config_in(fx, dir / "work");
  cfg.selection.top_k = 100'000;
  sc::Pipeline p(cfg);
  for (auto stage : {"ingest", "curate", "generate", "score"}) p.run_stage(stage);
  EXPECT_THROW(p.select(), sc::InvalidArgument);
}

TEST(Pipeline, JudgeStageConservesCount) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  sc::Pipeline p(config_in(fx, dir / "work"));
  p.run();
  p.judge();
  const auto meta = nlohmann::json::parse(slurp(p.artifact(sc::artifacts::kJudgeMeta)));
  EXPECT_EQ(meta["gen_wins"].get<std::size_t>() + meta["raw_wins"].get<std::size_t>() +
                meta["skipped"].get<std::size_t>(),
            30u);
  EXPECT_EQ(meta["template_hash"], sc::judge_template_hash());
  EXPECT_TRUE(fs::exists(p.artifact(sc::artifacts::kJudgeReport)));
}

TEST(Pipeline, LlmFilterWithRejectingJudgeEmptiesThePool) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  auto cfg = config_in(fx, dir / "work");
  cfg.curation.llm_filter = true;
  cfg.judge.backend.mock_mode = "always_b";
  sc::Pipeline p(cfg);
  p.ingest();
  EXPECT_THROW(p.curate(), sc::Error);
  EXPECT_NE(slurp(p.artifact(sc::artifacts::kFilterDecisions)).find("llm_reject"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto fx = sc::write_fixture(dir / "fx", small_fixture());
  const auto cfg = fx.config.string();
  EXPECT_EQ(cli("score --config " + cfg), 1);
  EXPECT_EQ(cli("run --config " + cfg), 0);
  EXPECT_TRUE(fs::exists(dir / "fx/work/dataset" / sc::kManifestFile));
  EXPECT_TRUE(fs::exists(dir / "fx/work/report/report.txt"));
  EXPECT_EQ(cli("judge --config " + cfg), 0);

  auto j = nlohmann::json::parse(slurp(fx.config));
  j["curation"]["fraction"] = 1.5;
  sc::testing::spit(dir / "bad.json", j.dump());
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "absent.json").string()), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
}

TEST(Cli, ConfigErrorMessageNamesField) {
  TempDir dir;
  sc::testing::spit(dir / "bad.json", R"({"curation": {"fraction": 1.5}})");
  const auto cmd = std::string(SYNTHCURATE_CLI) + " run --config " + (dir / "bad.json").string() +
                   " 2>" + (dir / "err.txt").string();
  ASSERT_NE(std::system(cmd.c_str()), 0);
  const auto err = slurp(dir / "err.txt");
  EXPECT_NE(err.find("curation.fraction = 1.5 is outside (0, 1]"), std::string::npos) << err;
}
