#include "synthcurate/judge.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "synthcurate/alignment.hpp"
#include "synthcurate/errors.hpp"
#include "synthcurate/hashing.hpp"
#include "synthcurate/mock_diffusion.hpp"

namespace synthcurate {

std::string_view to_string(Winner winner) {
  return winner == Winner::generated ? "generated" : "raw";
}

std::string_view to_string(PresentedOrder order) {
  return order == PresentedOrder::gen_first ? "gen_first" : "raw_first";
}

namespace {

constexpr std::string_view kCaptionSlot = "{caption}";
constexpr std::string_view kCaptionOpen = "Caption:\n\"\"\"\n";
constexpr std::string_view kCaptionClose = "\n\"\"\"\n";

constexpr std::string_view kJudgeTemplate =
    "You will see one caption and two candidate images, Image A and Image B.\n"
    "Decide which image is the better pair for the caption. Weigh two things:\n"
    "1. Image quality: sharpness, absence of artifacts, watermarks or overlaid text.\n"
    "2. Caption match: how well the image matches the caption, including the objects,\n"
    "   attributes, counts and relations the caption describes.\n"
    "Caption:\n\"\"\"\n{caption}\n\"\"\"\n"
    "You must choose one image; ties are not allowed.\n"
    "Answer with exactly one letter: A or B.";

}  // namespace

std::string_view judge_prompt_template() { return kJudgeTemplate; }

std::string judge_template_hash() { return sha256_hex(kJudgeTemplate); }

std::string build_judge_prompt(std::string_view caption) {
  if (caption.empty()) throw InvalidArgument("build_judge_prompt: empty caption");
  std::string prompt(kJudgeTemplate);
  const auto pos = prompt.find(kCaptionSlot);
  prompt.replace(pos, kCaptionSlot.size(), caption);
  return prompt;
}

std::optional<std::string> extract_judge_caption(std::string_view prompt) {
  const auto open = prompt.find(kCaptionOpen);
  if (open == std::string_view::npos) return std::nullopt;
  const auto start = open + kCaptionOpen.size();
  const auto close = prompt.find(kCaptionClose, start);
  if (close == std::string_view::npos) return std::nullopt;
  return std::string(prompt.substr(start, close - start));
}

PresentedOrder presentation_order(std::uint64_t seed, std::string_view caption_id) {
  const auto h = hash64(fmt::format("{}:{}", seed, caption_id));
  return (h & 1U) ? PresentedOrder::raw_first : PresentedOrder::gen_first;
}

Tally run_match_vote(std::span<const JudgeItem> items, JudgeBackend& judge, std::uint64_t seed,
                     const JudgeOptions& options) {
  std::vector<std::optional<JudgeVerdict>> results(items.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      const auto& item = items[i];
      Bytes gen, raw;
      try {
        gen = read_file_bytes(item.image_gen_ref);
        raw = read_file_bytes(item.image_raw_ref);
      } catch (const BackendError& e) {
        spdlog::warn("judge: skipping {}: {}", item.caption_id, e.what());
        continue;
      }
      const auto order = presentation_order(seed, item.caption_id);
      const auto& a = order == PresentedOrder::gen_first ? gen : raw;
      const auto& b = order == PresentedOrder::gen_first ? raw : gen;
      const auto prompt = build_judge_prompt(item.caption);
      try {
        const auto response = with_retry(options.retry, [&] { return judge.judge(prompt, a, b); });
        const bool picked_first = response.choice == JudgeChoice::A;
        const bool gen_won = picked_first == (order == PresentedOrder::gen_first);
        results[i] = JudgeVerdict{item.caption_id, gen_won ? Winner::generated : Winner::raw, order,
                                  response.raw};
      } catch (const std::exception& e) {
        spdlog::warn("judge: {} failed after retries: {}", item.caption_id, e.what());
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.max_in_flight, 1, std::max<std::size_t>(items.size(), 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
  }

  Tally tally;
  for (auto& r : results) {
    if (!r) {
      ++tally.skipped;
      continue;
    }
    if (r->winner == Winner::generated) {
      ++tally.gen_wins;
    } else {
      ++tally.raw_wins;
    }
    tally.verdicts.push_back(std::move(*r));
  }
  std::sort(tally.verdicts.begin(), tally.verdicts.end(),
            [](const auto& x, const auto& y) { return x.caption_id < y.caption_id; });
  return tally;
}

std::string format_sample_count(std::size_t count) {
  if (count >= 1000) return fmt::format("{}K", (count + 500) / 1000);
  return fmt::format("{}", count);
}

std::string tally_report(std::span<const std::pair<std::string, Tally>> tallies) {
  std::vector<std::array<std::string, 4>> rows;
  rows.push_back({"Sample", "Model", "Image-gen win", "Image-raw win"});
  for (const auto& [model, t] : tallies) {
    rows.push_back({format_sample_count(t.sample()), model, fmt::format("{}", t.gen_wins),
                    fmt::format("{}", t.raw_wins)});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out += fmt::format("{:<{}}  {:<{}}  {:>{}}  {:>{}}\n", r[0], width[0], r[1], width[1], r[2],
                       width[2], r[3], width[3]);
    if (i == 0) {
      out += std::string(width[0] + width[1] + width[2] + width[3] + 6, '-') + "\n";
    }
  }
  return out;
}

void write_verdicts(const std::filesystem::path& path, std::span<const JudgeVerdict> verdicts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& v : verdicts) {
    nlohmann::ordered_json j;
    j["caption_id"] = v.caption_id;
    j["winner"] = std::string(to_string(v.winner));
    j["presented_order"] = std::string(to_string(v.presented_order));
    j["raw_response"] = v.raw_response;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<JudgeVerdict> read_verdicts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<JudgeVerdict> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    JudgeVerdict v;
    v.caption_id = j.at("caption_id").get<std::string>();
    v.winner = j.at("winner").get<std::string>() == "generated" ? Winner::generated : Winner::raw;
    v.presented_order = j.at("presented_order").get<std::string>() == "gen_first"
                            ? PresentedOrder::gen_first
                            : PresentedOrder::raw_first;
    v.raw_response = j.at("raw_response").get<std::string>();
    out.push_back(std::move(v));
  }
  return out;
}

std::string MockJudge::id() const {
  switch (mode_) {
    case Mode::content:
      return "mock-judge";
    case Mode::always_a:
      return "mock-judge-always-a";
    case Mode::always_b:
      return "mock-judge-always-b";
  }
  return "mock-judge";
}

JudgeResponse MockJudge::judge(const std::string& prompt, std::span<const std::uint8_t> image_a,
                               std::span<const std::uint8_t> image_b) {
  if (mode_ == Mode::always_a) return {JudgeChoice::A, "A"};
  if (mode_ == Mode::always_b) return {JudgeChoice::B, "B"};

  // No images means a caption-screening request; content mode has nothing to
  // look at and accepts.
  if (image_a.empty() && image_b.empty()) return {JudgeChoice::A, "A"};

  const auto caption = extract_judge_caption(prompt);
  if (!caption) throw BackendError("mock judge: prompt carries no caption block");
  const auto text = mock_embed_text(*caption);
  double score_a = 0.0, score_b = 0.0;
  try {
    score_a = clip_score(mock_embed_image(image_a), text);
    score_b = clip_score(mock_embed_image(image_b), text);
  } catch (const InvalidArgument& e) {
    throw BackendError(std::string("mock judge: ") + e.what());
  }
  bool pick_a;
  if (score_a != score_b) {
    pick_a = score_a > score_b;
  } else {
    // Position-free tie break.
    pick_a = std::lexicographical_compare(image_a.begin(), image_a.end(), image_b.begin(),
                                          image_b.end());
  }
  return pick_a ? JudgeResponse{JudgeChoice::A, "A"} : JudgeResponse{JudgeChoice::B, "B"};
}

MockJudge::Mode parse_mock_judge_mode(std::string_view text) {
  if (text == "content") return MockJudge::Mode::content;
  if (text == "always_a" || text == "accept_all") return MockJudge::Mode::always_a;
  if (text == "always_b" || text == "reject_all") return MockJudge::Mode::always_b;
  throw InvalidArgument("unknown mock judge mode: " + std::string(text));
}

}  // namespace synthcurate
