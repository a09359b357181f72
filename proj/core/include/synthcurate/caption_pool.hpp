#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthcurate/alignment.hpp"
#include "synthcurate/backends.hpp"

namespace synthcurate {

// Where a caption came from. Known corpora map to fixed kinds; anything else
// is carried as other(label).
class SourceTag {
 public:
  enum class Kind {
    human_laion,
    human_cc,
    human_sbu,
    human_coco,
    machine_blip2_datacomp,
    other,
  };

  SourceTag() = default;
  explicit SourceTag(Kind kind, std::string label = {});

  // Accepts the known kind names, "other:<label>", or any other non-empty
  // string, which becomes other(<string>).
  static SourceTag parse(std::string_view text);

  Kind kind() const noexcept { return kind_; }
  const std::string& label() const noexcept { return label_; }
  std::string str() const;

  friend bool operator==(const SourceTag&, const SourceTag&) = default;

 private:
  Kind kind_ = Kind::other;
  std::string label_ = "unknown";
};

struct CaptionRecord {
  std::string id;
  std::string text;
  SourceTag source;
  std::optional<std::string> raw_image_ref;
  std::map<std::string, std::string> meta;

  // Normalizes `raw_text` and derives the id. Throws InvalidArgument when the
  // text is empty after normalization.
  static CaptionRecord make(std::string_view raw_text, SourceTag source,
                            std::optional<std::string> raw_image_ref = std::nullopt,
                            std::map<std::string, std::string> meta = {});

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

/// Content id of a caption: 32 hex chars of SHA-256 over (normalized text, source).
std::string caption_id(std::string_view normalized_text, const SourceTag& source);

enum class SourceFormat { jsonl, tsv };

SourceFormat parse_source_format(std::string_view text);
std::string_view to_string(SourceFormat format);

struct SourceSpec {
  SourceFormat format = SourceFormat::jsonl;
  std::filesystem::path location;
  SourceTag source_tag;
};

struct SourceStats {
  std::string source;
  std::string location;
  std::size_t ingested = 0;
  std::size_t rejected = 0;   // empty-after-normalization plus malformed
  std::size_t malformed = 0;
};

struct IngestResult {
  std::vector<CaptionRecord> pool;
  std::vector<SourceStats> stats;  // one entry per SourceSpec, in input order
};

/// Reads every source in order. Unreadable locations throw; bad rows are
/// skipped and counted. Relative image paths are resolved against the
/// directory of the source file. Does not deduplicate.
IngestResult ingest_captions(std::span<const SourceSpec> sources);

/// Keeps the first record per id, preserving input order.
std::vector<CaptionRecord> deduplicate(std::span<const CaptionRecord> pool);

enum class Verdict { keep, drop };
enum class DropReason { advertisement, repetition, length, malformed, llm_reject, none };

std::string_view to_string(Verdict verdict);
std::string_view to_string(DropReason reason);

struct FilterDecision {
  Verdict verdict = Verdict::keep;
  DropReason reason = DropReason::none;
  std::string detail;

  static FilterDecision keep() { return {}; }
  static FilterDecision drop(DropReason reason, std::string detail) {
    return {Verdict::drop, reason, std::move(detail)};
  }
};

struct RuleConfig {
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 128;
  double repetition_ratio = 0.5;
  double symbol_ratio = 0.3;
  std::vector<std::string> promo_tokens{"buy now", "discount", "sale", "click here",
                                        "free shipping"};
};

/// Deterministic caption screening. Checks run in the order
/// length, advertisement, repetition, malformed; the first hit wins.
FilterDecision rule_filter(const CaptionRecord& caption, const RuleConfig& rules);

/// Prompt sent to a judge backend for caption screening ("A" accept, "B" reject).
std::string build_screening_prompt(std::string_view caption);

struct LlmFilterStats {
  std::size_t warnings = 0;  // backend failures that passed the caption through
};

/// Optional model-based screening. A backend that keeps failing after retries
/// lets the caption through and bumps `stats.warnings`.
FilterDecision llm_filter(const CaptionRecord& caption, JudgeBackend& judge,
                          LlmFilterStats& stats, const RetryPolicy& retry = {});

struct Stage1Result {
  std::vector<ScoredPair> selected;  // canonical order
  std::vector<ScoredPair> scored;    // every usable pair, canonical order
  std::size_t missing_image = 0;
  std::size_t embedding_failures = 0;
};

/// Number of pairs kept out of n at the given fraction: floor(fraction * n),
/// at least 1 when n >= 1.
std::size_t selection_count(double fraction, std::size_t n);

/// Scores each caption against its raw image and keeps the top fraction.
Stage1Result stage1_select(std::span<const CaptionRecord> pool, EmbeddingBackend& backend,
                           double fraction, const BatchOptions& options = {});

/// Uniform sample of n caption ids without replacement; output id-ascending.
/// Throws InvalidArgument when n exceeds the number of kept pairs.
std::vector<std::string> sample_ids(std::span<const ScoredPair> kept, std::size_t n,
                                    std::uint64_t seed);

/// sample_ids resolved against `pool`.
std::vector<CaptionRecord> sample_pool(std::span<const ScoredPair> kept,
                                       std::span<const CaptionRecord> pool, std::size_t n,
                                       std::uint64_t seed);

// Caption persistence, one JSON object per line.
void write_captions(const std::filesystem::path& path, std::span<const CaptionRecord> captions);
std::vector<CaptionRecord> read_captions(const std::filesystem::path& path);

}  // namespace synthcurate
