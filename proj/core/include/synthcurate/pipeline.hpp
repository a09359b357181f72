#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "synthcurate/backends.hpp"
#include "synthcurate/config.hpp"

namespace synthcurate {

// Workdir artifact names. Images and the manifest live under the image root,
// which doubles as the dataset root.
namespace artifacts {
inline constexpr const char* kCaptions = "captions.jsonl";
inline constexpr const char* kIngestStats = "ingest_stats.json";
inline constexpr const char* kFilterDecisions = "filter_decisions.jsonl";
inline constexpr const char* kStage1Scores = "stage1_scores.jsonl";
inline constexpr const char* kCandidates = "candidates.jsonl";
inline constexpr const char* kCurateStats = "curate_stats.json";
inline constexpr const char* kJournal = "journal.jsonl";
inline constexpr const char* kGenerationParams = "generation_params.json";
inline constexpr const char* kStage2Scores = "stage2_scores.jsonl";
inline constexpr const char* kSelected = "selected.jsonl";
inline constexpr const char* kProvenance = "provenance.json";
inline constexpr const char* kReportDir = "report";
inline constexpr const char* kJudgeVerdicts = "judge_verdicts.jsonl";
inline constexpr const char* kJudgeReport = "judge_report.txt";
inline constexpr const char* kJudgeMeta = "judge_meta.json";
inline constexpr const char* kStampDir = ".stamps";
inline constexpr const char* kLockFile = ".lock";
}  // namespace artifacts

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // up to date, nothing executed
  std::string summary;
};

// Lets callers (tests, benchmarks) substitute backends for the configured ones.
struct BackendOverrides {
  std::function<std::unique_ptr<EmbeddingBackend>(const std::filesystem::path& image_root)>
      embedding;
  std::shared_ptr<ImageGenBackend> image_gen;
  std::shared_ptr<JudgeBackend> judge;
};

// Exclusive advisory lock on <workdir>/.lock, released on destruction or
// process death. Throws Error if another process holds it.
class WorkdirLock {
 public:
  explicit WorkdirLock(const std::filesystem::path& workdir);
  ~WorkdirLock();
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;

 private:
  int fd_ = -1;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, BackendOverrides overrides = {});
  ~Pipeline();

  const PipelineConfig& config() const noexcept { return config_; }
  std::filesystem::path workdir() const { return config_.workdir(); }
  std::filesystem::path artifact(std::string_view name) const { return workdir() / name; }

  StageOutcome ingest();
  StageOutcome curate();
  StageOutcome generate();
  StageOutcome score();
  StageOutcome select();
  StageOutcome judge();
  StageOutcome package();
  StageOutcome report();

  /// ingest..report (judge excluded), skipping stages whose stamped input
  /// hash and outputs are unchanged.
  std::vector<StageOutcome> run();

  /// Dispatches a stage by subcommand name.
  StageOutcome run_stage(std::string_view name);

  /// Hash of the current inputs of `stage`. Throws MissingArtifact if an
  /// input has not been produced yet.
  std::string input_hash(std::string_view stage) const;
  bool is_fresh(std::string_view stage) const;

 private:
  std::unique_ptr<EmbeddingBackend> make_embedding(const std::filesystem::path& root) const;
  ImageGenBackend& image_gen();
  JudgeBackend& judge_backend();
  std::vector<std::filesystem::path> outputs_of(std::string_view stage) const;
  std::string outputs_hash(std::string_view stage) const;
  void stamp(std::string_view stage);
  std::filesystem::path require(std::string_view name, std::string_view producer) const;

  PipelineConfig config_;
  BackendOverrides overrides_;
  std::unique_ptr<WorkdirLock> lock_;
  std::shared_ptr<ImageGenBackend> image_gen_;
  std::shared_ptr<JudgeBackend> judge_;
};

inline constexpr std::string_view kStageNames[] = {"ingest", "curate", "generate", "score",
                                                   "select", "package", "report"};

}  // namespace synthcurate
