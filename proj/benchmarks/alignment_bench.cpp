#include <benchmark/benchmark.h>

#include <cstdio>
#include <random>

#include "synthcurate/alignment.hpp"
#include "synthcurate/mock_diffusion.hpp"

namespace sc = synthcurate;

namespace {

sc::EmbeddingVector random_embedding(std::mt19937_64& gen, std::size_t dim) {
  std::normal_distribution<double> normal;
  sc::EmbeddingVector v;
  v.values.resize(dim);
  for (auto& x : v.values) x = normal(gen);
  return v;
}

std::vector<sc::ScoredPair> random_pairs(std::size_t n) {
  std::mt19937_64 gen(n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<sc::ScoredPair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "%016zx", static_cast<std::size_t>(gen()));
    pairs[i] = {id, "", std::round(u(gen) * 1e4) / 1e4, sc::Stage::stage2_synth};
  }
  return pairs;
}

}  // namespace

static void BM_ClipScore(benchmark::State& state) {
  std::mt19937_64 gen(1);
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto a = random_embedding(gen, dim);
  const auto b = random_embedding(gen, dim);
  for (auto _ : state) benchmark::DoNotOptimize(sc::clip_score(a, b));
}
BENCHMARK(BM_ClipScore)->Arg(512)->Arg(768)->Arg(1024);

// Selecting the 10% best, as stage 2 does.
static void BM_TopK(benchmark::State& state) {
  const auto pairs = random_pairs(static_cast<std::size_t>(state.range(0)));
  const auto k = pairs.size() / 10;
  for (auto _ : state) benchmark::DoNotOptimize(sc::top_k(pairs, k));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TopK)->Arg(10'000)->Arg(100'000)->Arg(1'000'000)->Unit(benchmark::kMillisecond);

static void BM_BatchScoreText(benchmark::State& state) {
  // Text-only path: image embedding reads files, so score captions against
  // themselves through a backend that embeds locators as text.
  class TextOnly final : public sc::EmbeddingBackend {
   public:
    std::string id() const override { return "text-only"; }
    std::vector<sc::EmbeddingVector> embed_text(std::span<const std::string> t) override {
      std::vector<sc::EmbeddingVector> out;
      for (const auto& s : t) out.push_back(sc::mock_embed_text(s));
      return out;
    }
    std::vector<sc::EmbeddingVector> embed_image(std::span<const std::string> l) override {
      return embed_text(l);
    }
  } backend;
  std::vector<sc::ScoreInput> inputs;
  for (int i = 0; i < state.range(0); ++i) {
    inputs.push_back({std::to_string(i), "img " + std::to_string(i), "caption " + std::to_string(i)});
  }
  sc::BatchOptions opts;
  opts.max_in_flight = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(sc::batch_score(inputs, backend, sc::Stage::stage1_raw, opts));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchScoreText)->Args({4096, 1})->Args({4096, 4})->Unit(benchmark::kMillisecond);
