#include <gtest/gtest.h>

#include "synthcurate/config.hpp"
#include "synthcurate/errors.hpp"
#include "test_support.hpp"

namespace sc = synthcurate;

namespace {

sc::PipelineConfig parse(std::string_view text) {
  auto c = sc::parse_config(text, "/base");
  sc::validate(c);
  return c;
}

std::string error_for(std::string_view text) {
  try {
    parse(text);
  } catch (const sc::ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, DefaultParameters) {
  const auto c = parse("{}");
  EXPECT_DOUBLE_EQ(c.curation.fraction, 0.40);
  EXPECT_EQ(c.curation.sample_n, 1'000'000u);
  EXPECT_EQ(c.generation.steps, 60);
  EXPECT_EQ(c.generation.width, 1024);
  EXPECT_EQ(c.generation.height, 1024);
  EXPECT_EQ(c.selection.top_k, 100'000u);
  EXPECT_EQ(c.generation.max_attempts, 3);
  EXPECT_EQ(c.scoring.backend.kind, sc::BackendSpec::Kind::mock);
}

TEST(Config, ValidationNamesFieldAndBound) {
  const auto msg = error_for(R"({"curation": {"fraction": 1.5}})");
  EXPECT_NE(msg.find("curation.fraction"), std::string::npos) << msg;
  EXPECT_NE(msg.find("(0, 1]"), std::string::npos) << msg;
  EXPECT_NE(error_for(R"({"curation": {"fraction": 0}})").find("curation.fraction"), std::string::npos);
  EXPECT_NE(error_for(R"({"selection": {"top_k": 0}})").find("selection.top_k"), std::string::npos);
  EXPECT_NE(error_for(R"({"generation": {"workers": 0}})").find("generation.workers"), std::string::npos);
  EXPECT_NE(error_for(R"({"generation": {"steps": "many"}})").find("generation.steps"), std::string::npos);
  EXPECT_NE(error_for(R"({"scoring": {"backend": "ftp://x"}})").find("scoring.backend"), std::string::npos);
  EXPECT_NE(error_for(R"({"judge": {"backend": {"kind": "mock", "mode": "coin"}}})").find("judge.backend.mode"),
            std::string::npos);
  EXPECT_NE(error_for("[1, 2]").find("object"), std::string::npos);
  EXPECT_NE(error_for("{not json").find("JSON"), std::string::npos);
  EXPECT_NE(error_for(R"({"sources": [{"format": "xml", "location": "a", "source_tag": "x"}]})")
                .find("sources[0]"),
            std::string::npos);
}

TEST(Config, BackendsAndPaths) {
  const auto c = parse(R"({
    "sources": [{"format": "tsv", "location": "data/c.tsv", "source_tag": "human_cc"}],
    "scoring": {"backend": "http://127.0.0.1:9000"},
    "generation": {"backend": {"kind": "mock", "latency_ms": 5}},
    "judge": {"backend": {"kind": "http", "url": "http://judge:1"}},
    "paths": {"workdir": "w", "image_root": "/abs/images"}
  })");
  ASSERT_EQ(c.sources.size(), 1u);
  EXPECT_EQ(c.sources[0].location, std::filesystem::path("/base/data/c.tsv"));
  EXPECT_EQ(c.sources[0].format, sc::SourceFormat::tsv);
  EXPECT_EQ(c.scoring.backend.kind, sc::BackendSpec::Kind::http);
  EXPECT_EQ(c.scoring.backend.url, "http://127.0.0.1:9000");
  EXPECT_EQ(c.generation.backend.latency_ms, 5);
  EXPECT_EQ(c.judge.backend.url, "http://judge:1");
  EXPECT_EQ(c.workdir(), std::filesystem::path("/base/w"));
  EXPECT_EQ(c.image_root(), std::filesystem::path("/abs/images"));
  EXPECT_EQ(parse("{}").image_root(), std::filesystem::path("/base/work/dataset"));
}

TEST(Config, OverridesApply) {
  auto c = parse("{}");
  sc::ConfigOverrides ov;
  ov.workdir = "/elsewhere";
  ov.seed = 99;
  ov.backend_url = "http://localhost:8000";
  sc::apply_overrides(c, ov);
  EXPECT_EQ(c.workdir(), std::filesystem::path("/elsewhere"));
  EXPECT_EQ(c.generation.global_seed, 99u);
  EXPECT_EQ(c.generation.backend.url, "http://localhost:8000");
  EXPECT_EQ(c.judge.backend.kind, sc::BackendSpec::Kind::http);
}

TEST(Config, HashCoversSettingsButNotPaths) {
  const auto base = parse("{}");
  auto moved = base;
  moved.paths.workdir = "/other";
  EXPECT_EQ(sc::config_hash(base), sc::config_hash(moved));
  auto reseeded = base;
  reseeded.generation.global_seed = 1;
  EXPECT_NE(sc::config_hash(base), sc::config_hash(reseeded));
  auto refraction = base;
  refraction.curation.fraction = 0.5;
  EXPECT_NE(sc::config_hash(base), sc::config_hash(refraction));
  EXPECT_EQ(sc::config_hash(base).size(), 64u);
}

TEST(Config, LoadFromFileResolvesAgainstConfigDir) {
  sc::testing::TempDir dir;
  sc::testing::spit(dir / "cfg/c.json",
                    R"({"sources": [{"location": "caps.jsonl", "source_tag": "human_coco"}]})");
  const auto c = sc::load_config(dir / "cfg/c.json");
  EXPECT_EQ(c.sources[0].location, dir / "cfg/caps.jsonl");
  EXPECT_THROW(sc::load_config(dir / "missing.json"), sc::ConfigError);
}

TEST(Config, HttpsBackendsAreRejected) {
  EXPECT_NE(error_for(R"({"generation": {"backend": "https://gpu:443"}})")
                .find("generation.backend.url = \"https://gpu:443\""),
            std::string::npos);
  EXPECT_EQ(error_for(R"({"generation": {"backend": "http://gpu:8731"}})"), "");
}
