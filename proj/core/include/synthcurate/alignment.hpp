#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthcurate/backends.hpp"
#include "synthcurate/embedding.hpp"
#include "synthcurate/retry.hpp"

namespace synthcurate {

enum class Stage { stage1_raw, stage2_synth };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct ScoredPair {
  std::string caption_id;
  std::string image_ref;
  double clip_score = 0.0;
  Stage stage = Stage::stage1_raw;

  friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

// Canonical order: score descending, caption_id ascending.
bool ranks_before(const ScoredPair& a, const ScoredPair& b) noexcept;
void sort_canonical(std::vector<ScoredPair>& pairs);

/// Cosine similarity between an image and a text embedding, clamped to [-1, 1].
/// Throws InvalidArgument on dimension mismatch or a zero-norm input.
double clip_score(const EmbeddingVector& image, const EmbeddingVector& text);

struct ScoreInput {
  std::string caption_id;
  std::string image_ref;
  std::string text;
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
  RetryPolicy retry{};
};

struct BatchScoreResult {
  std::vector<ScoredPair> pairs;  // canonical order
  std::size_t skipped = 0;
};

/// Scores every input through `backend`. Output does not depend on batch size
/// or concurrency. Items whose embeddings keep failing are skipped and counted;
/// BackendUnreachable after retries is fatal and propagates.
BatchScoreResult batch_score(std::span<const ScoreInput> inputs, EmbeddingBackend& backend,
                             Stage stage, const BatchOptions& options = {});

/// The k best pairs in canonical order. Throws InvalidArgument if k > size.
std::vector<ScoredPair> top_k(std::span<const ScoredPair> scored, std::size_t k);

/// Arithmetic mean of clip scores (Neumaier-compensated). Throws on empty input.
double mean_score(std::span<const ScoredPair> scored);

// Scored-pair persistence: one JSON object per line, scores with 6 decimals.
std::string format_score(double score);
void write_scored_pairs(const std::filesystem::path& path, std::span<const ScoredPair> pairs);
std::vector<ScoredPair> read_scored_pairs(const std::filesystem::path& path);

}  // namespace synthcurate
