#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "synthcurate/caption_pool.hpp"

namespace synthcurate {

struct BackendSpec {
  enum class Kind { mock, http } kind = Kind::mock;
  std::string url;                  // http only
  std::string mock_mode = "content";  // judge mock only
  int latency_ms = 0;                 // generation mock only
};

struct CurationConfig {
  double fraction = 0.40;
  RuleConfig rules{};
  bool llm_filter = false;
  std::size_t sample_n = 1'000'000;
  std::uint64_t sample_seed = 0;
};

struct ScoringConfig {
  BackendSpec backend{};
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  int backoff_ms = 100;
};

struct GenerationConfig {
  BackendSpec backend{};
  int steps = 60;
  int width = 1024;
  int height = 1024;
  std::size_t workers = 8;
  std::uint64_t global_seed = 0;
  int max_attempts = 3;
  bool fsync_journal = false;
};

struct SelectionConfig {
  std::size_t top_k = 100'000;
};

struct JudgeConfig {
  BackendSpec backend{};
  std::size_t sample_n = 1000;
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 4;
};

struct PackageConfig {
  std::string name = "synthcurate";
  std::string created_at = "1970-01-01T00:00:00Z";
  bool conversation_export = true;
};

struct PathsConfig {
  std::filesystem::path workdir = "work";
  std::filesystem::path image_root = "dataset";  // relative paths resolve against workdir
};

struct PipelineConfig {
  std::vector<SourceSpec> sources;
  CurationConfig curation;
  ScoringConfig scoring;
  GenerationConfig generation;
  SelectionConfig selection;
  JudgeConfig judge;
  PackageConfig package;
  PathsConfig paths;

  std::filesystem::path workdir() const { return paths.workdir; }
  std::filesystem::path image_root() const;
};

struct ConfigOverrides {
  std::optional<std::filesystem::path> workdir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend_url;
};

/// Parses JSON config text. Relative source and workdir paths resolve against
/// `base_dir`. Throws ConfigError naming the offending field.
PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});
void apply_overrides(PipelineConfig& config, const ConfigOverrides& overrides);
/// Throws ConfigError on the first violated bound.
void validate(const PipelineConfig& config);

/// Effective configuration as JSON text, without the `paths` block.
std::string canonical_config(const PipelineConfig& config);
/// SHA-256 of canonical_config; recorded in every manifest.
std::string config_hash(const PipelineConfig& config);

}  // namespace synthcurate
