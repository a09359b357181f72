#include "synthcurate/journal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iterator>

#include "synthcurate/errors.hpp"

namespace synthcurate {

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::pending:
      return "pending";
    case TaskStatus::running:
      return "running";
    case TaskStatus::done:
      return "done";
    case TaskStatus::failed:
      return "failed";
  }
  return "pending";
}

TaskStatus parse_task_status(std::string_view text) {
  if (text == "pending") return TaskStatus::pending;
  if (text == "running") return TaskStatus::running;
  if (text == "done") return TaskStatus::done;
  if (text == "failed") return TaskStatus::failed;
  throw InvalidArgument("unknown task status: " + std::string(text));
}

std::string JournalRecord::to_line() const {
  // Field order is fixed so journals diff cleanly.
  nlohmann::ordered_json j;
  j["caption_id"] = caption_id;
  j["status"] = std::string(to_string(status));
  j["attempts"] = attempts;
  if (image_ref) j["image_ref"] = *image_ref;
  if (error) j["error"] = *error;
  j["ts"] = ts;
  return j.dump();
}

JournalRecord JournalRecord::from_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  JournalRecord r;
  r.caption_id = j.at("caption_id").get<std::string>();
  r.status = parse_task_status(j.at("status").get<std::string>());
  r.attempts = j.at("attempts").get<int>();
  if (j.contains("image_ref")) r.image_ref = j["image_ref"].get<std::string>();
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  if (j.contains("ts")) r.ts = j["ts"].get<std::string>();
  if (r.caption_id.empty()) throw InvalidArgument("empty caption_id");
  if (r.status == TaskStatus::done && !r.image_ref) throw InvalidArgument("done without image_ref");
  return r;
}

namespace {

bool legal_transition(const ResumeView& view, const JournalRecord& record) {
  const auto it = view.find(record.caption_id);
  const auto to = record.status;
  if (it == view.end()) return to == TaskStatus::pending || to == TaskStatus::running;
  switch (it->second.status) {
    case TaskStatus::pending:
      return to == TaskStatus::running;
    case TaskStatus::running:
      return to != TaskStatus::pending;
    case TaskStatus::failed:
      return to == TaskStatus::running;
    case TaskStatus::done:
      return false;
  }
  return false;
}

}  // namespace

bool apply_record(ResumeView& view, const JournalRecord& record) {
  if (!legal_transition(view, record)) return false;
  auto& state = view[record.caption_id];
  state.status = record.status;
  state.attempts = record.attempts;
  state.image_ref = record.image_ref;
  state.error = record.error;
  return true;
}

ReplayResult replay_journal(const std::filesystem::path& path) {
  ReplayResult result;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) return result;
    throw CorruptData("cannot read journal " + path.string());
  }
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t offset = 0;
  while (offset < data.size()) {
    const auto nl = data.find('\n', offset);
    const bool complete = nl != std::string::npos;
    const std::size_t end = complete ? nl : data.size();
    const std::string_view line(data.data() + offset, end - offset);
    const bool is_last = !complete || end + 1 >= data.size();

    if (!complete) {
      spdlog::warn("journal {}: dropping torn record at byte {}", path.string(), offset);
      result.torn_tail = true;
      break;
    }
    if (!line.empty()) {
      JournalRecord record;
      try {
        record = JournalRecord::from_line(line);
      } catch (const std::exception& e) {
        if (is_last) {
          spdlog::warn("journal {}: dropping unparseable final record at byte {}", path.string(),
                       offset);
          result.torn_tail = true;
          break;
        }
        throw CorruptData(fmt::format("journal {}: corrupt record at byte {}: {}", path.string(),
                                      offset, e.what()));
      }
      if (!apply_record(result.view, record)) {
        throw CorruptData(fmt::format("journal {}: illegal transition for {} to {} at byte {}",
                                      path.string(), record.caption_id, to_string(record.status),
                                      offset));
      }
      ++result.records;
    }
    offset = end + 1;
    result.valid_bytes = offset;
  }
  return result;
}

ResumeView resume_view(const std::filesystem::path& path) { return replay_journal(path).view; }

GenerationJournal::GenerationJournal(std::filesystem::path path, bool sync_each_record)
    : path_(std::move(path)), sync_(sync_each_record) {
  auto replay = replay_journal(path_);
  if (replay.torn_tail) {
    std::filesystem::resize_file(path_, replay.valid_bytes);
  }
  view_ = std::move(replay.view);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(fmt::format("cannot open journal {}: {}", path_.string(), std::strerror(errno)));
  }
}

GenerationJournal::~GenerationJournal() {
  if (fd_ >= 0) ::close(fd_);
}

void GenerationJournal::append(JournalRecord record) {
  std::lock_guard lock(mutex_);
  if (record.ts.empty()) record.ts = utc_timestamp();
  if (!legal_transition(view_, record)) {
    throw InvalidArgument(fmt::format("journal: illegal transition for {} to {}",
                                      record.caption_id, to_string(record.status)));
  }
  // One write() per record so a crash can only tear the final line.
  const std::string line = record.to_line() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(fmt::format("journal write failed ({}): {}", path_.string(), std::strerror(errno)));
    }
    written += static_cast<std::size_t>(n);
  }
  if (sync_ && ::fsync(fd_) != 0) {
    throw Error(fmt::format("journal fsync failed ({}): {}", path_.string(), std::strerror(errno)));
  }
  apply_record(view_, record);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, ms);
}

}  // namespace synthcurate
