#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "synthcurate/alignment.hpp"
#include "synthcurate/errors.hpp"
#include "synthcurate/mock_diffusion.hpp"
#include "test_support.hpp"

namespace sc = synthcurate;

namespace {

sc::EmbeddingVector vec(std::vector<double> v) { return {std::move(v)}; }

// Oracle: plain dot / (norm * norm), written independently of the library.
double cosine_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

// Embeds text by table lookup; image locators are "score:<x>" so that the
// cosine against the unit text vector (1, 0) is exactly x.
class ScriptedEmbedding final : public sc::EmbeddingBackend {
 public:
  std::string id() const override { return "scripted"; }
  std::vector<sc::EmbeddingVector> embed_text(std::span<const std::string> texts) override {
    ++calls;
    return std::vector<sc::EmbeddingVector>(texts.size(), vec({1.0, 0.0}));
  }
  std::vector<sc::EmbeddingVector> embed_image(std::span<const std::string> locators) override {
    std::vector<sc::EmbeddingVector> out;
    for (const auto& l : locators) {
      if (l == "bad") throw sc::BackendError("undecodable image");
      if (l == "zero") {
        out.push_back(vec({0.0, 0.0}));
        continue;
      }
      const double x = std::stod(l.substr(6));
      out.push_back(vec({x, std::sqrt(1.0 - x * x)}));
    }
    return out;
  }
  std::atomic<int> calls{0};
};

class FlakyEmbedding final : public sc::EmbeddingBackend {
 public:
  explicit FlakyEmbedding(int failures, bool unreachable = false)
      : failures_(failures), unreachable_(unreachable) {}
  std::string id() const override { return "flaky"; }
  std::vector<sc::EmbeddingVector> embed_text(std::span<const std::string> texts) override {
    ++calls;
    if (failures_-- > 0) {
      if (unreachable_) throw sc::BackendUnreachable("connection refused");
      throw sc::BackendError("503");
    }
    return std::vector<sc::EmbeddingVector>(texts.size(), vec({1.0, 0.0}));
  }
  std::vector<sc::EmbeddingVector> embed_image(std::span<const std::string> locators) override {
    return std::vector<sc::EmbeddingVector>(locators.size(), vec({1.0, 1.0}));
  }
  std::atomic<int> calls{0};

 private:
  std::atomic<int> failures_;
  bool unreachable_;
};

const sc::RetryPolicy kNoWait{3, std::chrono::milliseconds{0}, 2.0};

std::vector<sc::ScoredPair> random_pairs(std::size_t n, std::uint64_t seed, int distinct_scores) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> score(0, distinct_scores - 1);
  std::vector<sc::ScoredPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({fmt::format("{:016x}", gen()), "img",
                   static_cast<double>(score(gen)) / distinct_scores, sc::Stage::stage2_synth});
  }
  return out;
}

std::vector<sc::ScoredPair> sort_oracle(std::vector<sc::ScoredPair> v) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.clip_score != b.clip_score) return a.clip_score > b.clip_score;
    return a.caption_id < b.caption_id;
  });
  return v;
}

}  // namespace

TEST(ClipScore, Examples) {
  EXPECT_DOUBLE_EQ(sc::clip_score(vec({0.6, 0.8}), vec({0.6, 0.8})), 1.0);
  EXPECT_DOUBLE_EQ(sc::clip_score(vec({1, 0, 0}), vec({0, 1, 0})), 0.0);
  EXPECT_NEAR(sc::clip_score(vec({3, 4}), vec({4, 3})), 24.0 / 25.0, 1e-15);
}

TEST(ClipScore, Errors) {
  EXPECT_THROW(sc::clip_score(vec({1, 0}), vec({1, 0, 0})), sc::InvalidArgument);
  EXPECT_THROW(sc::clip_score(vec({0, 0}), vec({1, 0})), sc::InvalidArgument);
  EXPECT_THROW(sc::clip_score(vec({1, 0}), vec({0, 0})), sc::InvalidArgument);
  EXPECT_THROW(sc::clip_score(vec({}), vec({})), sc::InvalidArgument);
}

TEST(ClipScore, RandomPairsMatchOracleAndSymmetry) {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(512), b(512);
    for (auto& x : a) x = n(gen);
    for (auto& x : b) x = n(gen);
    const double s = sc::clip_score(vec(a), vec(b));
    EXPECT_NEAR(s, cosine_oracle(a, b), 1e-12);
    EXPECT_EQ(s, sc::clip_score(vec(b), vec(a)));
    auto scaled = a;
    for (auto& x : scaled) x *= 7.5;
    EXPECT_NEAR(sc::clip_score(vec(scaled), vec(b)), s, 1e-12);
  }
}

TEST(ClipScore, ClampsToUnitInterval) {
  const std::vector<double> v{1e-3, 3e-3, 7e-3};
  const double s = sc::clip_score(vec(v), vec(v));
  EXPECT_LE(s, 1.0);
  EXPECT_GE(sc::clip_score(vec({1, 2}), vec({-1, -2})), -1.0);
}

TEST(BatchScore, EmptyInput) {
  ScriptedEmbedding backend;
  EXPECT_TRUE(sc::batch_score({}, backend, sc::Stage::stage1_raw).pairs.empty());
  EXPECT_EQ(backend.calls, 0);
}

TEST(BatchScore, SortOracleOnThree) {
  ScriptedEmbedding backend;
  const std::vector<sc::ScoreInput> in{
      {"a", "score:0.9", "t"}, {"b", "score:0.5", "t"}, {"c", "score:0.7", "t"}};
  const auto r = sc::batch_score(in, backend, sc::Stage::stage1_raw);
  ASSERT_EQ(r.pairs.size(), 3u);
  EXPECT_EQ(r.pairs[0].caption_id, "a");
  EXPECT_EQ(r.pairs[1].caption_id, "c");
  EXPECT_EQ(r.pairs[2].caption_id, "b");
  EXPECT_NEAR(r.pairs[0].clip_score, 0.9, 1e-12);
}

TEST(BatchScore, BatchSizeAndConcurrencyInvariance) {
  sc::testing::TempDir dir;
  std::vector<sc::ScoreInput> in;
  for (int i = 0; i < 100; ++i) {
    const auto text = "caption " + std::to_string(i);
    const auto png = sc::mock_render(i % 3 ? text : "other", 5, 30, 16, 16);
    const auto name = "i" + std::to_string(i) + ".png";
    sc::testing::spit(dir / name, std::string(png.begin(), png.end()));
    in.push_back({fmt::format("id{:03d}", i), name, text});
  }
  sc::MockEmbeddingBackend backend(dir.path());
  sc::BatchOptions one{1, 1, kNoWait};
  sc::BatchOptions wide{32, 4, kNoWait};
  sc::BatchOptions odd{7, 3, kNoWait};
  const auto a = sc::batch_score(in, backend, sc::Stage::stage2_synth, one);
  const auto b = sc::batch_score(in, backend, sc::Stage::stage2_synth, wide);
  const auto c = sc::batch_score(in, backend, sc::Stage::stage2_synth, odd);
  ASSERT_EQ(a.pairs.size(), 100u);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.pairs, c.pairs);
}

TEST(BatchScore, BadItemsSkippedWithoutLosingNeighbours) {
  ScriptedEmbedding backend;
  const std::vector<sc::ScoreInput> in{{"a", "score:0.9", "t"},
                                       {"b", "bad", "t"},
                                       {"c", "zero", "t"},
                                       {"d", "score:0.1", "t"}};
  const auto r = sc::batch_score(in, backend, sc::Stage::stage1_raw, {4, 1, kNoWait});
  EXPECT_EQ(r.skipped, 2u);
  ASSERT_EQ(r.pairs.size(), 2u);
  EXPECT_EQ(r.pairs[0].caption_id, "a");
  EXPECT_EQ(r.pairs[1].caption_id, "d");
}

TEST(BatchScore, TransientErrorsAreRetried) {
  FlakyEmbedding backend(2);
  const std::vector<sc::ScoreInput> in{{"a", "x", "t"}};
  const auto r = sc::batch_score(in, backend, sc::Stage::stage1_raw, {8, 1, kNoWait});
  EXPECT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(backend.calls, 3);
}

TEST(BatchScore, UnreachableBackendIsFatal) {
  FlakyEmbedding backend(1000, true);
  const std::vector<sc::ScoreInput> in{{"a", "x", "t"}, {"b", "y", "t"}};
  EXPECT_THROW(sc::batch_score(in, backend, sc::Stage::stage1_raw, {1, 2, kNoWait}),
               sc::BackendUnreachable);
}

TEST(TopK, MatchesFullSortOracleWithTies) {
  // 50 distinct score values over 10,000 pairs forces many ties.
  const auto pairs = random_pairs(10'000, 5, 50);
  const auto oracle = sort_oracle(pairs);
  for (std::size_t k : {0u, 1u, 100u, 1000u, 9999u, 10'000u}) {
    const auto got = sc::top_k(pairs, k);
    ASSERT_EQ(got.size(), k);
    EXPECT_TRUE(std::equal(got.begin(), got.end(), oracle.begin())) << "k=" << k;
  }
}

TEST(TopK, InputOrderDoesNotMatter) {
  auto pairs = random_pairs(2000, 8, 10);
  auto shuffled = pairs;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(1));
  EXPECT_EQ(sc::top_k(pairs, 300), sc::top_k(shuffled, 300));
}

TEST(TopK, TenPercentOfAMillion) {
  const auto pairs = random_pairs(1'000'000, 21, 100'000);
  const auto kept = sc::top_k(pairs, 100'000);
  EXPECT_EQ(kept.size(), 100'000u);
  EXPECT_DOUBLE_EQ(static_cast<double>(kept.size()) / pairs.size(), 0.1);
}

TEST(TopK, KTooLargeNamesBothCounts) {
  const auto pairs = random_pairs(3, 1, 10);
  try {
    sc::top_k(pairs, 4);
    FAIL();
  } catch (const sc::InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("k = 4"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3 scored"), std::string::npos);
  }
}

TEST(MeanScore, Examples) {
  std::vector<sc::ScoredPair> one{{"a", "", 0.31, sc::Stage::stage1_raw}};
  EXPECT_DOUBLE_EQ(sc::mean_score(one), 0.31);
  std::vector<sc::ScoredPair> two{{"a", "", 0.2, sc::Stage::stage1_raw},
                                  {"b", "", 0.4, sc::Stage::stage1_raw}};
  EXPECT_NEAR(sc::mean_score(two), 0.3, 1e-15);
  EXPECT_THROW(sc::mean_score({}), sc::InvalidArgument);
}

TEST(MeanScore, MatchesNaiveSumOracle) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<sc::ScoredPair> pairs;
  long double naive = 0;
  for (int i = 0; i < 10'000; ++i) {
    const double x = u(gen);
    naive += x;
    pairs.push_back({"id", "", x, sc::Stage::stage1_raw});
  }
  EXPECT_NEAR(sc::mean_score(pairs), static_cast<double>(naive / 10'000), 1e-9);
}

TEST(ScoredPairs, PersistenceRoundTrip) {
  sc::testing::TempDir dir;
  std::vector<sc::ScoredPair> pairs{{"a", "images/aa/a.png", 0.123456, sc::Stage::stage2_synth},
                                    {"b\"q", "/raw/b.png", -0.5, sc::Stage::stage1_raw}};
  sc::write_scored_pairs(dir / "s.jsonl", pairs);
  EXPECT_EQ(sc::read_scored_pairs(dir / "s.jsonl"), pairs);
  EXPECT_EQ(sc::format_score(0.1234567), "0.123457");
  sc::testing::spit(dir / "bad.jsonl", "{\"caption_id\": 1}\n");
  EXPECT_THROW(sc::read_scored_pairs(dir / "bad.jsonl"), sc::CorruptData);
}

TEST(Stage, ParseRoundTrip) {
  for (auto s : {sc::Stage::stage1_raw, sc::Stage::stage2_synth}) {
    EXPECT_EQ(sc::parse_stage(sc::to_string(s)), s);
  }
  EXPECT_THROW(sc::parse_stage("stage3"), sc::InvalidArgument);
}
