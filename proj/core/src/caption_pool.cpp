#include "synthcurate/caption_pool.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <unordered_map>
#include <unordered_set>

#include "synthcurate/errors.hpp"
#include "synthcurate/hashing.hpp"
#include "synthcurate/rng.hpp"
#include "synthcurate/text.hpp"

namespace synthcurate {

namespace {

constexpr std::pair<SourceTag::Kind, std::string_view> kKindNames[] = {
    {SourceTag::Kind::human_laion, "human_laion"},
    {SourceTag::Kind::human_cc, "human_cc"},
    {SourceTag::Kind::human_sbu, "human_sbu"},
    {SourceTag::Kind::human_coco, "human_coco"},
    {SourceTag::Kind::machine_blip2_datacomp, "machine_blip2_datacomp"},
};

}  // namespace

SourceTag::SourceTag(Kind kind, std::string label) : kind_(kind) {
  if (kind == Kind::other) {
    if (label.empty()) throw InvalidArgument("other(...) source tag needs a label");
    label_ = std::move(label);
  } else {
    label_.clear();
  }
}

SourceTag SourceTag::parse(std::string_view text) {
  for (const auto& [kind, name] : kKindNames) {
    if (text == name) return SourceTag(kind);
  }
  if (text.starts_with("other:")) text.remove_prefix(6);
  if (text.empty()) throw InvalidArgument("empty source tag");
  return SourceTag(Kind::other, std::string(text));
}

std::string SourceTag::str() const {
  for (const auto& [kind, name] : kKindNames) {
    if (kind_ == kind) return std::string(name);
  }
  return "other:" + label_;
}

std::string caption_id(std::string_view normalized_text, const SourceTag& source) {
  Sha256Stream h;
  h.update_field(normalized_text).update_field(source.str());
  return h.hex_digest().substr(0, 32);
}

CaptionRecord CaptionRecord::make(std::string_view raw_text, SourceTag source,
                                  std::optional<std::string> raw_image_ref,
                                  std::map<std::string, std::string> meta) {
  auto text = normalize_text(raw_text);
  if (text.empty()) throw InvalidArgument("caption text is empty after normalization");
  CaptionRecord rec;
  rec.id = caption_id(text, source);
  rec.text = std::move(text);
  rec.source = std::move(source);
  rec.raw_image_ref = std::move(raw_image_ref);
  rec.meta = std::move(meta);
  return rec;
}

SourceFormat parse_source_format(std::string_view text) {
  if (text == "jsonl") return SourceFormat::jsonl;
  if (text == "tsv") return SourceFormat::tsv;
  throw InvalidArgument("unknown source format: " + std::string(text) + " (expected jsonl or tsv)");
}

std::string_view to_string(SourceFormat format) {
  return format == SourceFormat::jsonl ? "jsonl" : "tsv";
}

namespace {

std::optional<std::string> resolve_image(const std::filesystem::path& base, std::string_view ref) {
  if (ref.empty()) return std::nullopt;
  if (ref.find("://") != std::string_view::npos) return std::string(ref);
  std::filesystem::path p(ref);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal().string();
}

struct RowSink {
  const SourceSpec& spec;
  std::filesystem::path base;
  IngestResult& result;
  SourceStats& stats;

  void accept(std::string_view text, std::string_view image,
              std::map<std::string, std::string> meta) {
    auto normalized = normalize_text(text);
    if (normalized.empty()) {
      ++stats.rejected;
      return;
    }
    CaptionRecord rec;
    rec.id = caption_id(normalized, spec.source_tag);
    rec.text = std::move(normalized);
    rec.source = spec.source_tag;
    rec.raw_image_ref = resolve_image(base, image);
    rec.meta = std::move(meta);
    result.pool.push_back(std::move(rec));
    ++stats.ingested;
  }

  void malformed(std::size_t lineno, std::string_view why) {
    ++stats.malformed;
    ++stats.rejected;
    spdlog::warn("ingest: {}:{}: skipping malformed row ({})", spec.location.string(), lineno, why);
  }
};

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

void ingest_jsonl(std::istream& in, RowSink& sink) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      sink.malformed(lineno, "not a JSON object");
      continue;
    }
    if (!row.is_object() || !row.contains("text") || !row["text"].is_string()) {
      sink.malformed(lineno, "missing string key \"text\"");
      continue;
    }
    std::string image;
    if (row.contains("image")) {
      if (!row["image"].is_string() && !row["image"].is_null()) {
        sink.malformed(lineno, "\"image\" is not a string");
        continue;
      }
      if (row["image"].is_string()) image = row["image"].get<std::string>();
    }
    std::map<std::string, std::string> meta;
    if (row.contains("meta") && row["meta"].is_object()) {
      for (const auto& [k, v] : row["meta"].items()) {
        meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    sink.accept(row["text"].get<std::string>(), image, std::move(meta));
  }
}

void ingest_tsv(std::istream& in, RowSink& sink) {
  std::string line;
  if (!std::getline(in, line)) return;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  std::vector<std::string> columns(header.begin(), header.end());
  const auto text_col = std::find(columns.begin(), columns.end(), "text");
  if (text_col == columns.end()) {
    throw Error("ingest: " + sink.spec.location.string() + ": header has no \"text\" column");
  }
  const auto text_idx = static_cast<std::size_t>(text_col - columns.begin());
  const auto image_it = std::find(columns.begin(), columns.end(), "image");
  const bool has_image = image_it != columns.end();
  const auto image_idx = static_cast<std::size_t>(image_it - columns.begin());  // == size when absent

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != columns.size()) {
      sink.malformed(lineno, fmt::format("{} cells, header has {}", cells.size(), columns.size()));
      continue;
    }
    std::map<std::string, std::string> meta;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == text_idx || (has_image && i == image_idx)) continue;
      meta[columns[i]] = std::string(cells[i]);
    }
    sink.accept(cells[text_idx], has_image ? cells[image_idx] : std::string_view{},
                std::move(meta));
  }
}

}  // namespace

IngestResult ingest_captions(std::span<const SourceSpec> sources) {
  IngestResult result;
  for (const auto& spec : sources) {
    std::ifstream in(spec.location, std::ios::binary);
    if (!in) throw Error("ingest: cannot read source " + spec.location.string());
    SourceStats stats;
    stats.source = spec.source_tag.str();
    stats.location = spec.location.string();
    RowSink sink{spec, spec.location.parent_path(), result, stats};
    if (spec.format == SourceFormat::jsonl) {
      ingest_jsonl(in, sink);
    } else {
      ingest_tsv(in, sink);
    }
    if (in.bad()) throw Error("ingest: read error on " + spec.location.string());
    result.stats.push_back(std::move(stats));
  }
  return result;
}

std::vector<CaptionRecord> deduplicate(std::span<const CaptionRecord> pool) {
  std::unordered_set<std::string_view> seen;
  std::vector<CaptionRecord> out;
  out.reserve(pool.size());
  for (const auto& rec : pool) {
    if (seen.insert(rec.id).second) out.push_back(rec);
  }
  return out;
}

std::string_view to_string(Verdict verdict) { return verdict == Verdict::keep ? "keep" : "drop"; }

std::string_view to_string(DropReason reason) {
  switch (reason) {
    case DropReason::advertisement:
      return "advertisement";
    case DropReason::repetition:
      return "repetition";
    case DropReason::length:
      return "length";
    case DropReason::malformed:
      return "malformed";
    case DropReason::llm_reject:
      return "llm_reject";
    case DropReason::none:
      return "none";
  }
  return "none";
}

namespace {

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || static_cast<unsigned char>(c) >= 0x80;
}

// Whole-phrase match in already lower-cased text.
bool contains_phrase(std::string_view haystack, std::string_view phrase) {
  if (phrase.empty()) return false;
  for (auto pos = haystack.find(phrase); pos != std::string_view::npos;
       pos = haystack.find(phrase, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
    const auto end = pos + phrase.size();
    const bool right_ok = end == haystack.size() || !is_word_char(haystack[end]);
    if (left_ok && right_ok) return true;
  }
  return false;
}

const std::regex& url_pattern() {
  static const std::regex re(
      R"((https?://|www\.)\S+|\b[a-z0-9-]+\.(com|net|org|io|biz|info|shop|store)\b)",
      std::regex::icase | std::regex::optimize);
  return re;
}

}  // namespace

FilterDecision rule_filter(const CaptionRecord& caption, const RuleConfig& rules) {
  const auto tokens = split_tokens(caption.text);

  if (tokens.size() < rules.min_tokens || tokens.size() > rules.max_tokens) {
    return FilterDecision::drop(DropReason::length,
                                fmt::format("{} tokens outside [{}, {}]", tokens.size(),
                                            rules.min_tokens, rules.max_tokens));
  }

  const auto lower = ascii_lower(caption.text);
  std::smatch m;
  if (std::regex_search(lower, m, url_pattern())) {
    return FilterDecision::drop(DropReason::advertisement, "url: " + m.str());
  }
  for (const auto& promo : rules.promo_tokens) {
    const auto needle = ascii_lower(promo);
    if (contains_phrase(lower, needle)) {
      return FilterDecision::drop(DropReason::advertisement, "promo token: " + needle);
    }
  }

  std::unordered_map<std::string, std::size_t> freq;
  std::size_t top = 0;
  for (auto tok : split_tokens(lower)) top = std::max(top, ++freq[std::string(tok)]);
  const double repetition = static_cast<double>(top) / static_cast<double>(tokens.size());
  if (repetition > rules.repetition_ratio) {
    return FilterDecision::drop(DropReason::repetition,
                                fmt::format("top token ratio {:.3f} > {}", repetition,
                                            rules.repetition_ratio));
  }

  const auto u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(caption.text.data(), static_cast<int32_t>(caption.text.size())));
  std::size_t total = 0, symbols = 0;
  for (int32_t i = 0; i < u.length();) {
    const UChar32 c = u.char32At(i);
    i += U16_LENGTH(c);
    ++total;
    if (!u_isalnum(c) && !u_isUWhiteSpace(c)) ++symbols;
  }
  const double symbol_frac = total == 0 ? 0.0 : static_cast<double>(symbols) / static_cast<double>(total);
  if (symbol_frac > rules.symbol_ratio) {
    return FilterDecision::drop(DropReason::malformed,
                                fmt::format("symbol fraction {:.3f} > {}", symbol_frac,
                                            rules.symbol_ratio));
  }
  return FilterDecision::keep();
}

std::string build_screening_prompt(std::string_view caption) {
  std::string prompt =
      "You are screening image captions for a text-to-image training corpus.\n"
      "Reject the caption if it is an advertisement or promotional text, if it is\n"
      "overly repetitive, or if it has serious grammatical errors. Otherwise accept it.\n"
      "Caption:\n\"\"\"\n";
  prompt.append(caption);
  prompt.append(
      "\n\"\"\"\n"
      "Answer with exactly one letter: A to accept the caption, B to reject it.");
  return prompt;
}

FilterDecision llm_filter(const CaptionRecord& caption, JudgeBackend& judge, LlmFilterStats& stats,
                          const RetryPolicy& retry) {
  const auto prompt = build_screening_prompt(caption.text);
  try {
    const auto response = with_retry(retry, [&] {
      return judge.judge(prompt, std::span<const std::uint8_t>{}, std::span<const std::uint8_t>{});
    });
    if (response.choice == JudgeChoice::A) return FilterDecision::keep();
    return FilterDecision::drop(DropReason::llm_reject, response.raw);
  } catch (const BackendError& e) {
    ++stats.warnings;
    spdlog::warn("llm_filter: judge unavailable for caption {}, keeping it: {}", caption.id,
                 e.what());
    return FilterDecision::keep();
  }
}

std::size_t selection_count(double fraction, std::size_t n) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument(fmt::format("selection fraction {} outside (0, 1]", fraction));
  }
  if (n == 0) return 0;
  // Guard against 0.4 * 10 landing at 3.9999999.
  auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

Stage1Result stage1_select(std::span<const CaptionRecord> pool, EmbeddingBackend& backend,
                           double fraction, const BatchOptions& options) {
  Stage1Result result;
  (void)selection_count(fraction, 1);
  std::vector<ScoreInput> inputs;
  inputs.reserve(pool.size());
  for (const auto& rec : pool) {
    if (!rec.raw_image_ref || rec.raw_image_ref->empty()) {
      ++result.missing_image;
      continue;
    }
    inputs.push_back({rec.id, *rec.raw_image_ref, rec.text});
  }
  auto scored = batch_score(inputs, backend, Stage::stage1_raw, options);
  result.embedding_failures = scored.skipped;
  result.scored = std::move(scored.pairs);
  const auto k = selection_count(fraction, result.scored.size());
  result.selected.assign(result.scored.begin(),
                         result.scored.begin() + static_cast<std::ptrdiff_t>(k));
  return result;
}

std::vector<std::string> sample_ids(std::span<const ScoredPair> kept, std::size_t n,
                                    std::uint64_t seed) {
  if (n > kept.size()) {
    throw InvalidArgument(
        fmt::format("sample_pool: requested {} captions but only {} are kept", n, kept.size()));
  }
  std::vector<std::string> ids;
  ids.reserve(kept.size());
  for (const auto& p : kept) ids.push_back(p.caption_id);
  // Canonicalize so the sample depends on the kept set, not its order.
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<CaptionRecord> sample_pool(std::span<const ScoredPair> kept,
                                       std::span<const CaptionRecord> pool, std::size_t n,
                                       std::uint64_t seed) {
  std::unordered_map<std::string_view, const CaptionRecord*> by_id;
  for (const auto& rec : pool) by_id.emplace(rec.id, &rec);
  std::vector<CaptionRecord> out;
  for (const auto& id : sample_ids(kept, n, seed)) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("sample_pool: unknown caption id " + id);
    out.push_back(*it->second);
  }
  return out;
}

void write_captions(const std::filesystem::path& path, std::span<const CaptionRecord> captions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& c : captions) {
    nlohmann::json j;
    j["id"] = c.id;
    j["text"] = c.text;
    j["source"] = c.source.str();
    if (c.raw_image_ref) j["raw_image_ref"] = *c.raw_image_ref;
    if (!c.meta.empty()) j["meta"] = c.meta;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<CaptionRecord> read_captions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<CaptionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CaptionRecord c;
      c.id = j.at("id").get<std::string>();
      c.text = j.at("text").get<std::string>();
      c.source = SourceTag::parse(j.at("source").get<std::string>());
      if (j.contains("raw_image_ref")) c.raw_image_ref = j["raw_image_ref"].get<std::string>();
      if (j.contains("meta")) c.meta = j["meta"].get<std::map<std::string, std::string>>();
      out.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw CorruptData(fmt::format("{}:{}: bad caption record: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

}  // namespace synthcurate
