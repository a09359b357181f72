#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "synthcurate/backends.hpp"
#include "synthcurate/caption_pool.hpp"
#include "synthcurate/journal.hpp"

namespace synthcurate {

struct GenConfig {
  std::uint64_t global_seed = 0;
  int steps = 60;
  int width = 1024;
  int height = 1024;
};

struct GenerationTask {
  std::string caption_id;
  std::string prompt;
  std::uint64_t seed = 0;
  int steps = 60;
  int width = 1024;
  int height = 1024;
  TaskStatus status = TaskStatus::pending;
  int attempts = 0;
  std::optional<std::string> image_ref;
};

/// Low 64 bits of SHA-256(caption_id || global_seed as 8 little-endian bytes).
std::uint64_t derive_task_seed(std::string_view caption_id, std::uint64_t global_seed);

/// images/<first two hex chars>/<caption_id>.png
std::string image_ref_for(std::string_view caption_id);

std::vector<GenerationTask> plan_tasks(std::span<const CaptionRecord> captions,
                                       const GenConfig& config);

struct RunOptions {
  std::size_t workers = 1;
  int max_attempts = 3;
  std::filesystem::path image_root;
};

struct GenerationSummary {
  std::size_t done = 0;     // completed during this run
  std::size_t failed = 0;   // out of attempts (this run or earlier)
  std::size_t skipped = 0;  // already done in the journal
  std::size_t backend_calls = 0;
};

/// Executes every task not already done in `journal` with at most
/// `options.workers` backend calls in flight. Images land at
/// image_root/image_ref_for(id). All journal writes happen on the calling
/// thread; a journal write failure aborts the run.
GenerationSummary run_generation(std::span<const GenerationTask> tasks, ImageGenBackend& backend,
                                 GenerationJournal& journal, const RunOptions& options);

}  // namespace synthcurate
