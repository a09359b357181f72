#include "synthcurate/fixtures.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <array>
#include <fstream>
#include <set>

#include "synthcurate/errors.hpp"
#include "synthcurate/mock_diffusion.hpp"
#include "synthcurate/rng.hpp"

namespace synthcurate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array kAdjectives{"small",  "large",  "red",    "blue",  "old",   "young",
                                 "wooden", "bright", "quiet",  "busy",  "green", "striped",
                                 "shiny",  "tall",   "sleepy", "white", "dark",  "golden"};
constexpr std::array kSubjects{"dog",     "cat",   "bicycle", "boat",   "child",  "horse",
                               "train",   "bird",  "woman",   "man",    "truck",  "kite",
                               "giraffe", "chair", "umbrella", "laptop", "bus",   "surfer"};
constexpr std::array kVerbs{"standing", "sitting", "resting", "waiting", "parked",
                            "running",  "lying",   "playing", "moving",  "posing"};
constexpr std::array kPlaces{"near a river",      "on a city street", "in a green field",
                             "beside the ocean",  "under a tree",     "in a kitchen",
                             "on a snowy hill",   "at the station",   "in a living room",
                             "next to a fence",   "on the beach",     "in the mountains"};
constexpr std::array kDetails{"",
                              " at sunset",
                              " on a cloudy day",
                              " with people in the background",
                              " in the morning light",
                              " surrounded by flowers"};

template <typename A>
const char* pick(Rng& rng, const A& arr) {
  return arr[static_cast<std::size_t>(rng.below(arr.size()))];
}

std::string junk_caption(Rng& rng, const std::string& clean) {
  switch (rng.below(3)) {
    case 0:
      return clean + " buy now with free shipping";
    case 1: {
      std::string word = pick(rng, kSubjects);
      std::string s = word;
      for (int i = 0; i < 7; ++i) s += " " + word;
      return s;
    }
    default:
      return pick(rng, kSubjects);
  }
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

std::vector<std::string> fixture_captions(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  std::set<std::string> seen;
  out.reserve(count);
  while (out.size() < count) {
    auto text = fmt::format("a {} {} {} {}{}", pick(rng, kAdjectives), pick(rng, kSubjects),
                            pick(rng, kVerbs), pick(rng, kPlaces), pick(rng, kDetails));
    // The grammar is finite; number the overflow so captions stay distinct.
    if (!seen.insert(text).second) text += fmt::format(" number {}", out.size());
    seen.insert(text);
    out.push_back(std::move(text));
  }
  return out;
}

Fixture write_fixture(const fs::path& dir, const FixtureOptions& opt) {
  if (opt.count == 0) throw InvalidArgument("fixture: count must be >= 1");
  if (opt.image_size < 8) throw InvalidArgument("fixture: image_size must be >= 8");
  fs::create_directories(dir / "raw");
  const auto clean = fixture_captions(opt.count, opt.seed);
  Rng rng(mix64(opt.seed ^ 0xf1c7u));

  Fixture fx;
  fx.dir = dir;
  fx.captions = dir / "captions.jsonl";
  fx.config = dir / "config.json";
  std::ofstream captions(fx.captions, std::ios::binary | std::ios::trunc);
  if (!captions) throw Error("cannot write " + fx.captions.string());

  std::string previous;
  for (std::size_t i = 0; i < opt.count; ++i) {
    std::string text = clean[i];
    if (rng.uniform() < opt.junk_rate) {
      text = junk_caption(rng, text);
    } else if (!previous.empty() && rng.uniform() < opt.duplicate_rate) {
      text = previous;
    }
    // Raw images: the caption itself at a random noise step, or a stranger's.
    const bool mismatched = rng.uniform() < opt.mismatch_rate;
    const auto& rendered = mismatched ? clean[static_cast<std::size_t>(rng.below(opt.count))] : text;
    const auto timestep = static_cast<std::size_t>(5 + rng.below(kMockScheduleSteps - 5 + 1));
    const auto png = mock_render(rendered, rng.next_u64(), timestep, opt.image_size, opt.image_size);
    const auto image = fmt::format("raw/{:06d}.png", i);
    write_file(dir / image, png);

    json row{{"text", text}, {"image", image}};
    captions << row.dump() << '\n';
    previous = text;
    ++fx.rows;
  }
  captions.close();
  if (!captions) throw Error("write failed: " + fx.captions.string());

  const auto top_k = opt.top_k ? opt.top_k : std::max<std::size_t>(1, opt.count / 10);
  json config{
      {"sources", json::array({{{"format", "jsonl"},
                                {"location", "captions.jsonl"},
                                {"source_tag", "human_coco"}}})},
      {"curation", {{"fraction", 0.4}, {"sample_n", opt.count}, {"sample_seed", opt.seed}}},
      {"scoring", {{"backend", "mock"}, {"batch_size", 64}, {"max_in_flight", 4}}},
      {"generation",
       {{"backend", {{"kind", "mock"}, {"latency_ms", opt.mock_latency_ms}}},
        {"steps", 60},
        {"width", opt.image_size},
        {"height", opt.image_size},
        {"workers", opt.workers},
        {"global_seed", opt.seed},
        {"max_attempts", 3}}},
      {"selection", {{"top_k", top_k}}},
      {"judge", {{"backend", "mock"}, {"sample_n", std::min<std::size_t>(opt.count, 1000)}, {"seed", 1}}},
      {"package", {{"name", "synthcurate-fixture"}}},
      {"paths", {{"workdir", "work"}, {"image_root", "dataset"}}}};
  std::ofstream cfg(fx.config, std::ios::binary | std::ios::trunc);
  cfg << config.dump(2) << '\n';
  if (!cfg) throw Error("cannot write " + fx.config.string());
  return fx;
}

}  // namespace synthcurate
