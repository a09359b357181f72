#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace synthcurate {

// Synthetic caption corpus with mock raw images, for demos and tests.
// Raw images are rendered from their caption at a random noise step, and a
// fraction are rendered from an unrelated caption, so stage-1 scores spread
// out the way a scraped corpus would.
struct FixtureOptions {
  std::size_t count = 1000;
  std::uint64_t seed = 7;
  int image_size = 32;          // raw images and generated images alike
  double mismatch_rate = 0.25;
  double junk_rate = 0.05;      // ads, repetition, too-short captions
  double duplicate_rate = 0.01;
  std::size_t top_k = 0;        // 0: a tenth of count
  std::size_t workers = 4;
  int mock_latency_ms = 0;
};

struct Fixture {
  std::filesystem::path dir;
  std::filesystem::path captions;  // captions.jsonl
  std::filesystem::path config;    // config.json, workdir = dir/work
  std::size_t rows = 0;
};

/// Writes captions.jsonl, raw/*.png and config.json into `dir`.
Fixture write_fixture(const std::filesystem::path& dir, const FixtureOptions& options = {});

/// The clean captions the fixture draws from, deterministic in `seed`.
std::vector<std::string> fixture_captions(std::size_t count, std::uint64_t seed);

}  // namespace synthcurate
