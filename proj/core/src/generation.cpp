#include "synthcurate/generation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <mutex>
#include <thread>

#include "synthcurate/errors.hpp"
#include "synthcurate/hashing.hpp"

namespace synthcurate {

std::uint64_t derive_task_seed(std::string_view caption_id, std::uint64_t global_seed) {
  std::string buf(caption_id);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((global_seed >> (8 * i)) & 0xff));
  const auto digest = sha256(buf);
  std::uint64_t seed = 0;
  for (std::size_t i = 24; i < 32; ++i) seed = (seed << 8) | digest[i];
  return seed;
}

std::string image_ref_for(std::string_view caption_id) {
  if (caption_id.size() < 2) throw InvalidArgument("caption id too short for image layout");
  return fmt::format("images/{}/{}.png", caption_id.substr(0, 2), caption_id);
}

std::vector<GenerationTask> plan_tasks(std::span<const CaptionRecord> captions,
                                       const GenConfig& config) {
  std::vector<GenerationTask> tasks;
  tasks.reserve(captions.size());
  for (const auto& c : captions) {
    GenerationTask t;
    t.caption_id = c.id;
    t.prompt = c.text;
    t.seed = derive_task_seed(c.id, config.global_seed);
    t.steps = config.steps;
    t.width = config.width;
    t.height = config.height;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

namespace {

struct Job {
  const GenerationTask* task;
  int first_attempt;
};

struct Event {
  enum class Kind { started, succeeded, failed, finished } kind;
  const GenerationTask* task = nullptr;
  int attempt = 0;
  std::string detail;  // image_ref or error
  // started only: fulfilled once the running record is on disk (or the run aborted).
  std::promise<void>* journaled = nullptr;
};

class Channel {
 public:
  void push(Event e) {
    {
      std::lock_guard lock(mutex_);
      events_.push_back(std::move(e));
    }
    cv_.notify_one();
  }

  Event pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !events_.empty(); });
    Event e = std::move(events_.front());
    events_.pop_front();
    return e;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Event> events_;
};

void write_image_atomically(const std::filesystem::path& target, const Bytes& bytes) {
  std::filesystem::create_directories(target.parent_path());
  auto tmp = target;
  tmp += fmt::format(".tmp{}", std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace

GenerationSummary run_generation(std::span<const GenerationTask> tasks, ImageGenBackend& backend,
                                 GenerationJournal& journal, const RunOptions& options) {
  if (options.workers < 1) throw InvalidArgument("run_generation: workers must be >= 1");
  if (options.max_attempts < 1) throw InvalidArgument("run_generation: max_attempts must be >= 1");

  GenerationSummary summary;
  std::vector<Job> jobs;
  for (const auto& task : tasks) {
    const auto it = journal.view().find(task.caption_id);
    if (it == journal.view().end()) {
      jobs.push_back({&task, 1});
      continue;
    }
    const auto& state = it->second;
    switch (state.status) {
      case TaskStatus::done:
        ++summary.skipped;
        break;
      case TaskStatus::failed:
        if (state.attempts >= options.max_attempts) {
          ++summary.failed;
        } else {
          jobs.push_back({&task, state.attempts + 1});
        }
        break;
      case TaskStatus::running:
        // Interrupted mid-call: that attempt never finished, so redo it.
        jobs.push_back({&task, std::max(1, state.attempts)});
        break;
      case TaskStatus::pending:
        jobs.push_back({&task, 1});
        break;
    }
  }
  if (jobs.empty()) return summary;

  Channel channel;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::atomic<std::size_t> calls{0};

  auto worker = [&] {
    while (!abort.load()) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) break;
      const auto& task = *jobs[j].task;
      for (int attempt = jobs[j].first_attempt; attempt <= options.max_attempts; ++attempt) {
        if (abort.load()) break;
        // The backend is called only after the running record is written,
        // so a journal failure stops new calls.
        std::promise<void> journaled;
        auto ack = journaled.get_future();
        channel.push({Event::Kind::started, &task, attempt, {}, &journaled});
        ack.wait();
        if (abort.load()) break;
        try {
          calls.fetch_add(1);
          auto image = backend.generate(
              {task.prompt, task.seed, task.steps, task.width, task.height});
          const auto ref = image_ref_for(task.caption_id);
          write_image_atomically(options.image_root / ref, image.bytes);
          channel.push({Event::Kind::succeeded, &task, attempt, ref, nullptr});
          break;
        } catch (const std::exception& e) {
          channel.push({Event::Kind::failed, &task, attempt, e.what(), nullptr});
        }
      }
    }
    channel.push({Event::Kind::finished, nullptr, 0, {}, nullptr});
  };

  const std::size_t num_workers = std::min(options.workers, jobs.size());
  std::exception_ptr fatal;
  {
    std::vector<std::jthread> pool;
    pool.reserve(num_workers);
    for (std::size_t i = 0; i < num_workers; ++i) pool.emplace_back(worker);

    std::size_t finished = 0;
    while (finished < num_workers) {
      auto ev = channel.pop();
      if (ev.kind == Event::Kind::finished) {
        ++finished;
        continue;
      }
      if (fatal) {  // drain only
        if (ev.journaled) ev.journaled->set_value();
        continue;
      }
      try {
        JournalRecord rec;
        rec.caption_id = ev.task->caption_id;
        rec.attempts = ev.attempt;
        switch (ev.kind) {
          case Event::Kind::started:
            rec.status = TaskStatus::running;
            break;
          case Event::Kind::succeeded:
            rec.status = TaskStatus::done;
            rec.image_ref = ev.detail;
            ++summary.done;
            break;
          case Event::Kind::failed:
            rec.status = TaskStatus::failed;
            rec.error = ev.detail;
            if (ev.attempt >= options.max_attempts) {
              ++summary.failed;
              spdlog::warn("generate: {} failed after {} attempts: {}", ev.task->caption_id,
                           ev.attempt, ev.detail);
            }
            break;
          case Event::Kind::finished:
            break;
        }
        journal.append(std::move(rec));
      } catch (...) {
        fatal = std::current_exception();
        abort.store(true);
      }
      if (ev.journaled) ev.journaled->set_value();
    }
  }
  summary.backend_calls = calls.load();
  if (fatal) std::rethrow_exception(fatal);
  return summary;
}

}  // namespace synthcurate
