#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "synthcurate/backends.hpp"
#include "synthcurate/retry.hpp"

namespace synthcurate {

struct JudgeItem {
  std::string caption_id;
  std::string caption;
  std::filesystem::path image_gen_ref;
  std::filesystem::path image_raw_ref;
};

enum class Winner { generated, raw };
enum class PresentedOrder { gen_first, raw_first };

std::string_view to_string(Winner winner);
std::string_view to_string(PresentedOrder order);

struct JudgeVerdict {
  std::string caption_id;
  Winner winner = Winner::generated;
  PresentedOrder presented_order = PresentedOrder::gen_first;
  std::string raw_response;

  friend bool operator==(const JudgeVerdict&, const JudgeVerdict&) = default;
};

struct Tally {
  std::size_t gen_wins = 0;
  std::size_t raw_wins = 0;
  std::size_t skipped = 0;
  std::vector<JudgeVerdict> verdicts;  // sorted by caption_id

  std::size_t sample() const noexcept { return gen_wins + raw_wins + skipped; }
};

std::string build_judge_prompt(std::string_view caption);
/// Template with the caption slot left open; its hash goes into run metadata.
std::string_view judge_prompt_template();
std::string judge_template_hash();
/// Inverse of build_judge_prompt, for judges that only see the prompt text.
std::optional<std::string> extract_judge_caption(std::string_view prompt);

/// Which image is shown as "A" for this item. Depends only on (seed, caption_id),
/// so it is independent of item order and concurrency.
PresentedOrder presentation_order(std::uint64_t seed, std::string_view caption_id);

struct JudgeOptions {
  std::size_t max_in_flight = 4;
  // One call plus two retries.
  RetryPolicy retry{3, std::chrono::milliseconds{100}, 2.0};
};

Tally run_match_vote(std::span<const JudgeItem> items, JudgeBackend& judge, std::uint64_t seed,
                     const JudgeOptions& options = {});

/// Rows {Sample, Model, Image-gen win, Image-raw win} as an aligned table.
std::string tally_report(std::span<const std::pair<std::string, Tally>> tallies);
std::string format_sample_count(std::size_t count);

void write_verdicts(const std::filesystem::path& path, std::span<const JudgeVerdict> verdicts);
std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path);

// Offline judge. `content` embeds both images with the mock encoder and picks
// the one closer to the caption, independent of position. The fixed modes
// always answer "A" or "B".
class MockJudge final : public JudgeBackend {
 public:
  enum class Mode { content, always_a, always_b };

  explicit MockJudge(Mode mode = Mode::content) : mode_(mode) {}

  std::string id() const override;
  JudgeResponse judge(const std::string& prompt, std::span<const std::uint8_t> image_a,
                      std::span<const std::uint8_t> image_b) override;

 private:
  Mode mode_;
};

MockJudge::Mode parse_mock_judge_mode(std::string_view text);

}  // namespace synthcurate
