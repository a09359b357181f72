#include "synthcurate/packaging.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <unordered_map>

#include "synthcurate/errors.hpp"
#include "synthcurate/judge.hpp"

namespace synthcurate {

using nlohmann::json;

std::size_t histogram_bin(double score) {
  const double clamped = std::clamp(score, -1.0, 1.0);
  // The nudge keeps decimal edges such as -0.9 in the bin they open; without
  // it (-0.9 + 1) * 10 rounds to just under 1.
  const auto bin =
      static_cast<std::size_t>(std::floor((clamped + 1.0) / 2.0 * kHistogramBins + 1e-9));
  return std::min(bin, kHistogramBins - 1);
}

ScoreHistogram score_histogram(std::span<const ScoredPair> pairs) {
  ScoreHistogram h{};
  for (const auto& p : pairs) ++h[histogram_bin(p.clip_score)];
  return h;
}

ScoreStats compute_stats(std::span<const ScoredPair> pairs) {
  ScoreStats s;
  s.count = pairs.size();
  if (pairs.empty()) return s;
  s.mean_clip_score = mean_score(pairs);
  const auto [lo, hi] = std::minmax_element(
      pairs.begin(), pairs.end(),
      [](const auto& a, const auto& b) { return a.clip_score < b.clip_score; });
  s.min = lo->clip_score;
  s.max = hi->clip_score;
  s.histogram = score_histogram(pairs);
  return s;
}

DatasetManifest build_manifest(std::span<const ScoredPair> pairs,
                               std::span<const CaptionRecord> captions,
                               const std::filesystem::path& dataset_root, const ManifestInfo& info) {
  std::unordered_map<std::string_view, const CaptionRecord*> by_id;
  for (const auto& c : captions) by_id.emplace(c.id, &c);

  DatasetManifest m;
  m.name = info.name;
  m.created_at = info.created_at;
  m.provenance = info.provenance;
  m.entries.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto it = by_id.find(p.caption_id);
    if (it == by_id.end()) {
      throw InvalidArgument("manifest: no caption for id " + p.caption_id);
    }
    if (!std::filesystem::is_regular_file(dataset_root / p.image_ref)) {
      throw InvalidArgument(fmt::format("manifest: image for {} is missing ({})", p.caption_id,
                                        (dataset_root / p.image_ref).string()));
    }
    m.entries.push_back({p.caption_id, p.image_ref, it->second->text});
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  m.stats = compute_stats(pairs);
  return m;
}

namespace {

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

DatasetManifest write_manifest(std::span<const ScoredPair> pairs,
                               std::span<const CaptionRecord> captions,
                               const std::filesystem::path& dataset_root, const ManifestInfo& info) {
  auto m = build_manifest(pairs, captions, dataset_root, info);
  write_text(dataset_root / kManifestFile, serialize_manifest(m));
  if (info.conversation_export) {
    write_text(dataset_root / kConversationFile, conversation_export(m));
  }
  return m;
}

std::string serialize_manifest(const DatasetManifest& m) {
  json j;  // std::map-backed: keys come out sorted
  j["name"] = m.name;
  j["created_at"] = m.created_at;
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back({{"id", e.id}, {"image", e.image}, {"caption", e.caption}});
  }
  j["stats"] = {{"count", m.stats.count},
                {"mean_clip_score", m.stats.mean_clip_score},
                {"min", m.stats.min},
                {"max", m.stats.max},
                {"score_histogram", m.stats.histogram}};
  j["provenance"] = {{"generator_backend", m.provenance.generator_backend},
                     {"embedding_backend", m.provenance.embedding_backend},
                     {"config_hash", m.provenance.config_hash},
                     {"global_seed", m.provenance.global_seed}};
  return j.dump(2) + "\n";
}

DatasetManifest parse_manifest(std::string_view text) {
  try {
    const auto j = json::parse(text);
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                           e.at("caption").get<std::string>()});
    }
    const auto& s = j.at("stats");
    m.stats.count = s.at("count").get<std::size_t>();
    m.stats.mean_clip_score = s.at("mean_clip_score").get<double>();
    m.stats.min = s.at("min").get<double>();
    m.stats.max = s.at("max").get<double>();
    m.stats.histogram = s.at("score_histogram").get<ScoreHistogram>();
    const auto& p = j.at("provenance");
    m.provenance.generator_backend = p.at("generator_backend").get<std::string>();
    m.provenance.embedding_backend = p.at("embedding_backend").get<std::string>();
    m.provenance.config_hash = p.at("config_hash").get<std::string>();
    m.provenance.global_seed = p.at("global_seed").get<std::uint64_t>();
    return m;
  } catch (const json::exception& e) {
    throw CorruptData(std::string("manifest: ") + e.what());
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text(path));
}

std::string conversation_export(const DatasetManifest& manifest) {
  json arr = json::array();
  for (const auto& e : manifest.entries) {
    arr.push_back({{"id", e.id},
                   {"image", e.image},
                   {"conversations",
                    json::array({{{"from", "human"}, {"value", kImagePlaceholder}},
                                 {{"from", "gpt"}, {"value", e.caption}}})}});
  }
  return arr.dump(2) + "\n";
}

std::vector<ManifestEntry> parse_conversation_export(std::string_view text) {
  try {
    const auto arr = json::parse(text);
    std::vector<ManifestEntry> out;
    for (const auto& item : arr) {
      const auto& turns = item.at("conversations");
      if (turns.size() != 2 || turns[0].at("value").get<std::string>() != kImagePlaceholder) {
        throw CorruptData("conversation export: unexpected turn layout for " +
                          item.at("id").get<std::string>());
      }
      out.push_back({item.at("id").get<std::string>(), item.at("image").get<std::string>(),
                     turns[1].at("value").get<std::string>()});
    }
    return out;
  } catch (const json::exception& e) {
    throw CorruptData(std::string("conversation export: ") + e.what());
  }
}

ProvenanceReport verify_provenance(const DatasetManifest& manifest, const ResumeView& journal) {
  std::set<std::string> produced;
  for (const auto& [id, state] : journal) {
    if (state.status == TaskStatus::done && state.image_ref) produced.insert(*state.image_ref);
  }
  ProvenanceReport report;
  for (const auto& e : manifest.entries) {
    if (!produced.contains(e.image)) report.violations.push_back(e.image);
  }
  std::sort(report.violations.begin(), report.violations.end());
  report.ok = report.violations.empty();
  return report;
}

StatsReport stats_report(std::span<const DatasetScores> datasets) {
  StatsReport report;
  std::vector<std::array<std::string, 3>> rows;
  rows.push_back({"Name", "Sample", "Avg CLIPScore"});
  for (const auto& d : datasets) {
    if (d.pairs.empty()) {
      report.warnings.push_back(fmt::format("dataset '{}' is empty; row omitted", d.name));
      spdlog::warn("report: {}", report.warnings.back());
      continue;
    }
    const auto stats = compute_stats(d.pairs);
    rows.push_back({d.name, format_sample_count(stats.count),
                    fmt::format("{:.2f}", stats.mean_clip_score)});
    nlohmann::ordered_json rec;
    rec["name"] = d.name;
    rec["count"] = stats.count;
    rec["mean_clip_score"] = stats.mean_clip_score;
    rec["min"] = stats.min;
    rec["max"] = stats.max;
    report.records += rec.dump() + "\n";
    report.histograms.emplace_back(d.name, stats.histogram);
  }
  std::array<std::size_t, 3> width{};
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < 3; ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    report.table += fmt::format("{:<{}}  {:>{}}  {:>{}}\n", r[0], width[0], r[1], width[1], r[2],
                                width[2]);
    if (i == 0) report.table += std::string(width[0] + width[1] + width[2] + 4, '-') + "\n";
  }
  return report;
}

void write_stats_report(const StatsReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.txt", report.table);
  write_text(dir / "report.jsonl", report.records);
  for (const auto& [name, hist] : report.histograms) {
    std::string body = "bin_low\tbin_high\tcount\n";
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      const double lo = -1.0 + 2.0 * static_cast<double>(b) / kHistogramBins;
      const double hi = -1.0 + 2.0 * static_cast<double>(b + 1) / kHistogramBins;
      body += fmt::format("{:.2f}\t{:.2f}\t{}\n", lo, hi, hist[b]);
    }
    std::string file = name;
    for (auto& ch : file) {
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    }
    write_text(dir / ("histogram_" + file + ".tsv"), body);
  }
}

}  // namespace synthcurate
