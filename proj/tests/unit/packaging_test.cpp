#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "synthcurate/errors.hpp"
#include "synthcurate/generation.hpp"
#include "synthcurate/packaging.hpp"
#include "test_support.hpp"

namespace sc = synthcurate;
using sc::testing::slurp;
using sc::testing::spit;
using sc::testing::TempDir;

namespace {

struct Corpus {
  std::vector<sc::CaptionRecord> captions;
  std::vector<sc::ScoredPair> pairs;
};

Corpus corpus(const TempDir& dir, const std::vector<double>& scores) {
  Corpus c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto rec = sc::CaptionRecord::make("caption " + std::to_string(i), sc::SourceTag::parse("human_coco"));
    const auto ref = sc::image_ref_for(rec.id);
    spit(dir / ref, "png");
    c.pairs.push_back({rec.id, ref, scores[i], sc::Stage::stage2_synth});
    c.captions.push_back(std::move(rec));
  }
  return c;
}

sc::ManifestInfo info() {
  sc::ManifestInfo i;
  i.name = "test-set";
  i.created_at = "1970-01-01T00:00:00Z";
  i.provenance = {"mock-diffusion", "mock-embedding-512", "abc", 7};
  return i;
}

sc::ResumeView done_view(const std::vector<sc::ScoredPair>& pairs) {
  sc::ResumeView v;
  for (const auto& p : pairs) v[p.caption_id] = {sc::TaskStatus::done, 1, p.image_ref, std::nullopt};
  return v;
}

std::vector<sc::ScoredPair> constant_pairs(std::size_t n, double score) {
  return std::vector<sc::ScoredPair>(n, sc::ScoredPair{"", "", score, sc::Stage::stage1_raw});
}

}  // namespace

TEST(Histogram, BinsAndCounting) {
  EXPECT_EQ(sc::histogram_bin(-1.0), 0u);
  EXPECT_EQ(sc::histogram_bin(1.0), 19u);
  EXPECT_EQ(sc::histogram_bin(0.0), 10u);
  EXPECT_EQ(sc::histogram_bin(-0.95), 0u);
  EXPECT_EQ(sc::histogram_bin(-0.9), 1u);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<sc::ScoredPair> pairs;
  for (int i = 0; i < 5000; ++i) pairs.push_back({"x", "", u(gen), sc::Stage::stage1_raw});
  const auto h = sc::score_histogram(pairs);
  std::size_t total = 0;
  for (auto c : h) total += c;
  EXPECT_EQ(total, pairs.size());
}

TEST(Manifest, ThreePairs) {
  TempDir dir;
  const auto c = corpus(dir, {0.5, 0.7, 0.6});
  const auto m = sc::write_manifest(c.pairs, c.captions, dir.path(), info());
  EXPECT_EQ(m.stats.count, 3u);
  ASSERT_EQ(m.entries.size(), 3u);
  for (const auto& e : m.entries) {
    EXPECT_TRUE(std::filesystem::path(e.image).is_relative());
    EXPECT_TRUE(std::filesystem::exists(dir / e.image));
  }
  EXPECT_TRUE(std::is_sorted(m.entries.begin(), m.entries.end(),
                             [](const auto& a, const auto& b) { return a.id < b.id; }));
  EXPECT_NEAR(m.stats.mean_clip_score, 0.6, 1e-12);
  EXPECT_DOUBLE_EQ(m.stats.min, 0.5);
  EXPECT_DOUBLE_EQ(m.stats.max, 0.7);
  EXPECT_TRUE(std::filesystem::exists(dir / sc::kManifestFile));
  EXPECT_TRUE(std::filesystem::exists(dir / sc::kConversationFile));
}

TEST(Manifest, MeanOfEqualScores) {
  TempDir dir;
  const auto c = corpus(dir, {0.38, 0.38, 0.38});
  EXPECT_NEAR(sc::build_manifest(c.pairs, c.captions, dir.path(), info()).stats.mean_clip_score,
              0.38, 1e-15);
}

TEST(Manifest, MissingImageNamesId) {
  TempDir dir;
  const auto c = corpus(dir, {0.5, 0.4});
  std::filesystem::remove(dir / c.pairs[1].image_ref);
  try {
    sc::build_manifest(c.pairs, c.captions, dir.path(), info());
    FAIL();
  } catch (const sc::InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find(c.pairs[1].caption_id), std::string::npos);
  }
}

TEST(Manifest, SerializationIsStableAndParsesBack) {
  TempDir dir;
  const auto c = corpus(dir, {0.9, 0.1, 0.4, 0.4});
  auto shuffled = c.pairs;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto a = sc::serialize_manifest(sc::build_manifest(c.pairs, c.captions, dir.path(), info()));
  const auto b = sc::serialize_manifest(sc::build_manifest(shuffled, c.captions, dir.path(), info()));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.back(), '\n');
  const auto back = sc::parse_manifest(a);
  EXPECT_EQ(sc::serialize_manifest(back), a);
  EXPECT_EQ(back.provenance.global_seed, 7u);
}

TEST(Manifest, ConversationExportRoundTrip) {
  TempDir dir;
  auto c = corpus(dir, {0.3, 0.2});
  c.captions[0].text = "a caption with \"quotes\" and unicode caf\xC3\xA9";
  const auto m = sc::build_manifest(c.pairs, c.captions, dir.path(), info());
  const auto text = sc::conversation_export(m);
  EXPECT_NE(text.find(sc::kImagePlaceholder), std::string::npos);
  EXPECT_EQ(sc::parse_conversation_export(text), m.entries);
}

TEST(Provenance, PipelineBuiltManifestPasses) {
  TempDir dir;
  const auto c = corpus(dir, {0.3, 0.2, 0.1});
  const auto m = sc::build_manifest(c.pairs, c.captions, dir.path(), info());
  const auto r = sc::verify_provenance(m, done_view(c.pairs));
  EXPECT_TRUE(r.ok);
  EXPECT_TRUE(r.violations.empty());
}

TEST(Provenance, InjectedExternalImageIsFlagged) {
  TempDir dir;
  const auto c = corpus(dir, {0.3, 0.2, 0.1});
  auto m = sc::build_manifest(c.pairs, c.captions, dir.path(), info());
  m.entries.push_back({"outsider", "external/scraped.png", "a scraped photo"});
  const auto r = sc::verify_provenance(m, done_view(c.pairs));
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.violations, std::vector<std::string>{"external/scraped.png"});
}

TEST(Provenance, ViolationsEqualSetDifference) {
  TempDir dir;
  std::vector<double> scores(40);
  std::iota(scores.begin(), scores.end(), 0.0);
  for (auto& s : scores) s /= 40.0;
  const auto c = corpus(dir, scores);
  auto m = sc::build_manifest(c.pairs, c.captions, dir.path(), info());
  auto view = done_view(c.pairs);
  std::mt19937_64 gen(4);
  // Knock out some journal entries and mark others as failed or running.
  std::size_t i = 0;
  for (auto it = view.begin(); it != view.end(); ++i) {
    const auto r = gen() % 4;
    if (r == 0) {
      it = view.erase(it);
      continue;
    }
    if (r == 1) it->second.status = (i % 2) ? sc::TaskStatus::failed : sc::TaskStatus::running;
    ++it;
  }
  std::set<std::string> manifest_refs, done_refs;
  for (const auto& e : m.entries) manifest_refs.insert(e.image);
  for (const auto& [id, st] : view) {
    if (st.status == sc::TaskStatus::done) done_refs.insert(*st.image_ref);
  }
  std::vector<std::string> oracle;
  std::set_difference(manifest_refs.begin(), manifest_refs.end(), done_refs.begin(), done_refs.end(),
                      std::back_inserter(oracle));
  ASSERT_FALSE(oracle.empty());
  EXPECT_EQ(sc::verify_provenance(m, view).violations, oracle);
}

TEST(StatsReport, ThreeDatasetRows) {
  std::vector<sc::DatasetScores> ds{{"human-corpus", constant_pairs(120'000, 0.29)},
                                    {"recapped", constant_pairs(560'000, 0.33)},
                                    {"synth-v1", constant_pairs(1'000'000, 0.36)}};
  const auto r = sc::stats_report(ds);
  EXPECT_NE(r.table.find("human-corpus    120K           0.29"), std::string::npos) << r.table;
  EXPECT_NE(r.table.find("recapped        560K           0.33"), std::string::npos) << r.table;
  EXPECT_NE(r.table.find("synth-v1       1000K           0.36"), std::string::npos) << r.table;
  EXPECT_NE(r.table.find("Avg CLIPScore"), std::string::npos);
}

TEST(StatsReport, RoundsToTwoDecimalsAndOmitsEmpty) {
  std::vector<sc::DatasetScores> ds{{"one", constant_pairs(1, 0.5)}, {"empty", {}}};
  const auto r = sc::stats_report(ds);
  EXPECT_NE(r.table.find("0.50"), std::string::npos);
  EXPECT_EQ(r.table.find("empty"), std::string::npos);
  ASSERT_EQ(r.warnings.size(), 1u);
  ASSERT_EQ(r.histograms.size(), 1u);
  std::size_t total = 0;
  for (auto c : r.histograms[0].second) total += c;
  EXPECT_EQ(total, 1u);
}

TEST(StatsReport, FilesWritten) {
  TempDir dir;
  std::vector<sc::DatasetScores> ds{{"Raw pairs", constant_pairs(3, 0.2)}};
  sc::write_stats_report(sc::stats_report(ds), dir / "r");
  EXPECT_TRUE(std::filesystem::exists(dir / "r/report.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "r/report.jsonl"));
  const auto tsv = slurp(dir / "r/histogram_Raw_pairs.tsv");
  EXPECT_NE(tsv.find("0.20\t0.30\t3"), std::string::npos) << tsv;
}
