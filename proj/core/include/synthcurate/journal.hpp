#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace synthcurate {

enum class TaskStatus { pending, running, done, failed };

std::string_view to_string(TaskStatus status);
TaskStatus parse_task_status(std::string_view text);

struct JournalRecord {
  std::string caption_id;
  TaskStatus status = TaskStatus::pending;
  int attempts = 0;
  std::optional<std::string> image_ref;
  std::optional<std::string> error;
  std::string ts;  // ISO-8601 UTC; informational only

  std::string to_line() const;  // without trailing newline
  static JournalRecord from_line(std::string_view line);
};

struct TaskState {
  TaskStatus status = TaskStatus::pending;
  int attempts = 0;
  std::optional<std::string> image_ref;
  std::optional<std::string> error;

  friend bool operator==(const TaskState&, const TaskState&) = default;
};

using ResumeView = std::map<std::string, TaskState>;

struct ReplayResult {
  ResumeView view;
  std::size_t records = 0;
  std::size_t valid_bytes = 0;  // prefix of the file holding complete records
  bool torn_tail = false;
};

/// Replays a journal file into the latest-status view. A final record without
/// its newline, or unparseable, is treated as a torn write and ignored (with a
/// warning). Any earlier bad record or illegal transition throws CorruptData
/// naming the byte offset. A missing file yields an empty view.
ReplayResult replay_journal(const std::filesystem::path& path);
ResumeView resume_view(const std::filesystem::path& path);

/// Append-only task-state log. Opening repairs a torn tail by truncating it.
/// append() is serialized internally and throws on any write failure.
class GenerationJournal {
 public:
  explicit GenerationJournal(std::filesystem::path path, bool sync_each_record = false);
  ~GenerationJournal();
  GenerationJournal(const GenerationJournal&) = delete;
  GenerationJournal& operator=(const GenerationJournal&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  // View as of open() plus everything appended since.
  const ResumeView& view() const noexcept { return view_; }

  void append(JournalRecord record);

 private:
  std::filesystem::path path_;
  bool sync_;
  int fd_ = -1;
  ResumeView view_;
  std::mutex mutex_;
};

// Applies one record to a view, enforcing the legal transitions:
// pending->running, running->{done,failed,running}, failed->running.
// Returns false if the transition is illegal.
bool apply_record(ResumeView& view, const JournalRecord& record);

std::string utc_timestamp();

}  // namespace synthcurate
