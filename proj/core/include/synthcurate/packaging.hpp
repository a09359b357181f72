#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "synthcurate/alignment.hpp"
#include "synthcurate/caption_pool.hpp"
#include "synthcurate/journal.hpp"

namespace synthcurate {

inline constexpr std::size_t kHistogramBins = 20;
using ScoreHistogram = std::array<std::size_t, kHistogramBins>;

// Uniform bins over [-1, 1]; the top edge falls in the last bin.
std::size_t histogram_bin(double score);
ScoreHistogram score_histogram(std::span<const ScoredPair> pairs);

struct ScoreStats {
  std::size_t count = 0;
  double mean_clip_score = 0.0;
  double min = 0.0;
  double max = 0.0;
  ScoreHistogram histogram{};
};

ScoreStats compute_stats(std::span<const ScoredPair> pairs);

struct ManifestEntry {
  std::string id;
  std::string image;  // relative to the dataset root
  std::string caption;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Provenance {
  std::string generator_backend;
  std::string embedding_backend;
  std::string config_hash;
  std::uint64_t global_seed = 0;
};

struct DatasetManifest {
  std::string name;
  std::string created_at;
  std::vector<ManifestEntry> entries;  // ordered by id
  ScoreStats stats;
  Provenance provenance;
};

struct ManifestInfo {
  std::string name;
  std::string created_at;
  Provenance provenance;
  bool conversation_export = true;
};

inline constexpr const char* kManifestFile = "dataset.json";
inline constexpr const char* kConversationFile = "conversations.json";
inline constexpr const char* kImagePlaceholder = "<image>";

/// Builds the manifest from selected pairs. Every image_ref must exist under
/// `dataset_root`; a missing one throws InvalidArgument naming the caption id.
DatasetManifest build_manifest(std::span<const ScoredPair> pairs,
                               std::span<const CaptionRecord> captions,
                               const std::filesystem::path& dataset_root, const ManifestInfo& info);

/// build_manifest, then persists dataset.json (and conversations.json when
/// enabled) under dataset_root.
DatasetManifest write_manifest(std::span<const ScoredPair> pairs,
                               std::span<const CaptionRecord> captions,
                               const std::filesystem::path& dataset_root, const ManifestInfo& info);

// Stable serialization: sorted keys, fixed indentation, trailing newline.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text);
DatasetManifest read_manifest(const std::filesystem::path& path);

std::string conversation_export(const DatasetManifest& manifest);
std::vector<ManifestEntry> parse_conversation_export(std::string_view text);

struct ProvenanceReport {
  bool ok = true;
  std::vector<std::string> violations;  // offending image paths, sorted
};

/// Every manifest image must be the output of a journaled, completed task.
ProvenanceReport verify_provenance(const DatasetManifest& manifest, const ResumeView& journal);

struct DatasetScores {
  std::string name;
  std::vector<ScoredPair> pairs;
};

struct StatsReport {
  std::string table;                   // aligned plain text
  std::string records;                 // one JSON object per line
  std::vector<std::string> warnings;   // empty datasets that were omitted
  std::vector<std::pair<std::string, ScoreHistogram>> histograms;
};

/// Rows {Name, Sample, Avg CLIPScore}; average to two decimals.
StatsReport stats_report(std::span<const DatasetScores> datasets);
/// Writes report.txt, report.jsonl and histogram_<name>.tsv into `dir`.
void write_stats_report(const StatsReport& report, const std::filesystem::path& dir);

}  // namespace synthcurate
