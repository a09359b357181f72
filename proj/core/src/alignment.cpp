#include "synthcurate/alignment.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "synthcurate/errors.hpp"

namespace synthcurate {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::stage1_raw:
      return "stage1_raw";
    case Stage::stage2_synth:
      return "stage2_synth";
  }
  return "stage1_raw";
}

Stage parse_stage(std::string_view text) {
  if (text == "stage1_raw") return Stage::stage1_raw;
  if (text == "stage2_synth") return Stage::stage2_synth;
  throw InvalidArgument("unknown stage tag: " + std::string(text));
}

bool ranks_before(const ScoredPair& a, const ScoredPair& b) noexcept {
  if (a.clip_score != b.clip_score) return a.clip_score > b.clip_score;
  return a.caption_id < b.caption_id;
}

void sort_canonical(std::vector<ScoredPair>& pairs) {
  std::sort(pairs.begin(), pairs.end(), ranks_before);
}

double clip_score(const EmbeddingVector& image, const EmbeddingVector& text) {
  if (image.dim() != text.dim()) {
    throw InvalidArgument(fmt::format("clip_score: dimension mismatch ({} vs {})", image.dim(),
                                      text.dim()));
  }
  image.validate();
  text.validate();
  double dot = 0.0, ii = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < image.dim(); ++i) {
    dot += image.values[i] * text.values[i];
    ii += image.values[i] * image.values[i];
    tt += text.values[i] * text.values[i];
  }
  const double cosine = dot / (std::sqrt(ii) * std::sqrt(tt));
  return std::clamp(cosine, -1.0, 1.0);
}

namespace {

struct BatchOutcome {
  std::vector<ScoredPair> pairs;
  std::size_t skipped = 0;
};

// Embeds one contiguous slice; throws BackendError on backend failure.
BatchOutcome score_slice(std::span<const ScoreInput> slice, EmbeddingBackend& backend, Stage stage) {
  std::vector<std::string> texts;
  std::vector<std::string> images;
  texts.reserve(slice.size());
  images.reserve(slice.size());
  for (const auto& in : slice) {
    texts.push_back(in.text);
    images.push_back(in.image_ref);
  }
  auto text_vecs = backend.embed_text(texts);
  auto image_vecs = backend.embed_image(images);
  if (text_vecs.size() != slice.size() || image_vecs.size() != slice.size()) {
    throw BackendError(fmt::format("embedding backend returned {}/{} vectors for a batch of {}",
                                   text_vecs.size(), image_vecs.size(), slice.size()));
  }
  BatchOutcome out;
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const auto& iv = image_vecs[i];
    const auto& tv = text_vecs[i];
    if (!iv.valid() || !tv.valid() || iv.dim() != tv.dim()) {
      ++out.skipped;
      continue;
    }
    out.pairs.push_back({slice[i].caption_id, slice[i].image_ref, clip_score(iv, tv), stage});
  }
  return out;
}

BatchOutcome score_batch(std::span<const ScoreInput> batch, EmbeddingBackend& backend, Stage stage,
                         const RetryPolicy& retry) {
  try {
    return with_retry(retry, [&] { return score_slice(batch, backend, stage); });
  } catch (const BackendUnreachable&) {
    throw;
  } catch (const BackendError&) {
    if (batch.size() == 1) return {{}, 1};
  }
  // Isolate the failing items so one bad image does not drop its neighbours.
  BatchOutcome out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      auto one = with_retry(retry, [&] { return score_slice(batch.subspan(i, 1), backend, stage); });
      out.skipped += one.skipped;
      for (auto& p : one.pairs) out.pairs.push_back(std::move(p));
    } catch (const BackendUnreachable&) {
      throw;
    } catch (const BackendError&) {
      ++out.skipped;
    }
  }
  return out;
}

}  // namespace

BatchScoreResult batch_score(std::span<const ScoreInput> inputs, EmbeddingBackend& backend,
                             Stage stage, const BatchOptions& options) {
  BatchScoreResult result;
  if (inputs.empty()) return result;

  const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  const std::size_t num_batches = (inputs.size() + batch_size - 1) / batch_size;
  const std::size_t num_workers =
      std::clamp<std::size_t>(options.max_in_flight, 1, num_batches);

  std::vector<std::optional<BatchOutcome>> outcomes(num_batches);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto work = [&] {
    while (!abort.load()) {
      const std::size_t b = next.fetch_add(1);
      if (b >= num_batches) return;
      const std::size_t begin = b * batch_size;
      const std::size_t len = std::min(batch_size, inputs.size() - begin);
      try {
        outcomes[b] = score_batch(inputs.subspan(begin, len), backend, stage, options.retry);
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        abort.store(true);
        return;
      }
    }
  };

  if (num_workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(num_workers);
    for (std::size_t i = 0; i < num_workers; ++i) pool.emplace_back(work);
  }
  if (fatal) std::rethrow_exception(fatal);

  for (auto& outcome : outcomes) {
    result.skipped += outcome->skipped;
    for (auto& p : outcome->pairs) result.pairs.push_back(std::move(p));
  }
  sort_canonical(result.pairs);
  return result;
}

std::vector<ScoredPair> top_k(std::span<const ScoredPair> scored, std::size_t k) {
  if (k > scored.size()) {
    throw InvalidArgument(
        fmt::format("top_k: k = {} exceeds the {} scored pairs available", k, scored.size()));
  }
  std::vector<ScoredPair> all(scored.begin(), scored.end());
  const auto mid = all.begin() + static_cast<std::ptrdiff_t>(k);
  std::partial_sort(all.begin(), mid, all.end(), ranks_before);
  all.erase(mid, all.end());
  return all;
}

double mean_score(std::span<const ScoredPair> scored) {
  if (scored.empty()) throw InvalidArgument("mean_score: empty input");
  double sum = 0.0;
  double compensation = 0.0;
  for (const auto& p : scored) {
    const double x = p.clip_score;
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      compensation += (sum - t) + x;
    } else {
      compensation += (x - t) + sum;
    }
    sum = t;
  }
  return (sum + compensation) / static_cast<double>(scored.size());
}

std::string format_score(double score) { return fmt::format("{:.6f}", score); }

void write_scored_pairs(const std::filesystem::path& path, std::span<const ScoredPair> pairs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& p : pairs) {
    out << "{\"caption_id\":" << nlohmann::json(p.caption_id).dump()
        << ",\"image_ref\":" << nlohmann::json(p.image_ref).dump()
        << ",\"clip_score\":" << format_score(p.clip_score) << ",\"stage\":\""
        << to_string(p.stage) << "\"}\n";
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<ScoredPair> read_scored_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<ScoredPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      pairs.push_back({j.at("caption_id").get<std::string>(), j.at("image_ref").get<std::string>(),
                       j.at("clip_score").get<double>(),
                       parse_stage(j.at("stage").get<std::string>())});
    } catch (const std::exception& e) {
      throw CorruptData(fmt::format("{}:{}: bad scored-pair record: {}", path.string(), lineno,
                                    e.what()));
    }
  }
  return pairs;
}

}  // namespace synthcurate
