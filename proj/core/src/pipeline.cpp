#include "synthcurate/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <unordered_map>

#include "synthcurate/alignment.hpp"
#include "synthcurate/caption_pool.hpp"
#include "synthcurate/errors.hpp"
#include "synthcurate/generation.hpp"
#include "synthcurate/hashing.hpp"
#include "synthcurate/http_backends.hpp"
#include "synthcurate/journal.hpp"
#include "synthcurate/judge.hpp"
#include "synthcurate/mock_diffusion.hpp"
#include "synthcurate/packaging.hpp"

namespace synthcurate {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace artifacts;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// tmp + rename, so a killed process never leaves a half-written file behind.
void write_text_atomic(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string file_hash(const fs::path& path) { return sha256_hex(read_text(path)); }

json config_section(const PipelineConfig& cfg, const char* key) {
  return json::parse(canonical_config(cfg)).at(key);
}

// Generation settings that change what gets generated. Worker count and
// backend latency only change how fast.
json generation_params(const PipelineConfig& cfg) {
  auto g = config_section(cfg, "generation");
  g.erase("workers");
  g.erase("fsync_journal");
  g["backend"].erase("latency_ms");
  return g;
}

BatchOptions batch_options(const ScoringConfig& s) {
  BatchOptions opts;
  opts.batch_size = s.batch_size;
  opts.max_in_flight = s.max_in_flight;
  opts.retry.max_attempts = s.max_attempts;
  opts.retry.initial_backoff = std::chrono::milliseconds(s.backoff_ms);
  return opts;
}

std::unordered_map<std::string, const CaptionRecord*> index_by_id(
    const std::vector<CaptionRecord>& captions) {
  std::unordered_map<std::string, const CaptionRecord*> out;
  out.reserve(captions.size());
  for (const auto& c : captions) out.emplace(c.id, &c);
  return out;
}

}  // namespace

WorkdirLock::WorkdirLock(const fs::path& workdir) {
  fs::create_directories(workdir);
  const auto path = workdir / kLockFile;
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(fmt::format("cannot open {}: {}", path.string(), std::strerror(errno)));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(fmt::format("workdir {} is in use by another synthcurate process", workdir.string()));
  }
}

WorkdirLock::~WorkdirLock() {
  if (fd_ >= 0) ::close(fd_);
}

Pipeline::Pipeline(PipelineConfig config, BackendOverrides overrides)
    : config_(std::move(config)), overrides_(std::move(overrides)) {
  lock_ = std::make_unique<WorkdirLock>(config_.workdir());
}

Pipeline::~Pipeline() = default;

std::unique_ptr<EmbeddingBackend> Pipeline::make_embedding(const fs::path& root) const {
  if (overrides_.embedding) return overrides_.embedding(root);
  const auto& spec = config_.scoring.backend;
  if (spec.kind == BackendSpec::Kind::http) {
    return std::make_unique<HttpEmbeddingBackend>(HttpEndpoint::from_url(spec.url), root);
  }
  return std::make_unique<MockEmbeddingBackend>(root);
}

ImageGenBackend& Pipeline::image_gen() {
  if (!image_gen_) {
    const auto& spec = config_.generation.backend;
    if (overrides_.image_gen) {
      image_gen_ = overrides_.image_gen;
    } else if (spec.kind == BackendSpec::Kind::http) {
      image_gen_ = std::make_shared<HttpImageGenBackend>(HttpEndpoint::from_url(spec.url));
    } else {
      image_gen_ = std::make_shared<MockImageGenBackend>(std::chrono::milliseconds(spec.latency_ms));
    }
  }
  return *image_gen_;
}

JudgeBackend& Pipeline::judge_backend() {
  if (!judge_) {
    const auto& spec = config_.judge.backend;
    if (overrides_.judge) {
      judge_ = overrides_.judge;
    } else if (spec.kind == BackendSpec::Kind::http) {
      judge_ = std::make_shared<HttpJudgeBackend>(HttpEndpoint::from_url(spec.url));
    } else {
      judge_ = std::make_shared<MockJudge>(parse_mock_judge_mode(spec.mock_mode));
    }
  }
  return *judge_;
}

fs::path Pipeline::require(std::string_view name, std::string_view producer) const {
  auto path = artifact(name);
  if (!fs::exists(path)) throw MissingArtifact(path.string(), std::string(producer));
  return path;
}

std::string Pipeline::input_hash(std::string_view stage) const {
  Sha256Stream h;
  h.update_field(stage);
  auto add_file = [&](const char* name, const char* producer) {
    h.update_field(name);
    h.update_field(file_hash(require(name, producer)));
  };
  if (stage == "ingest") {
    h.update_field(config_section(config_, "sources").dump());
    for (const auto& s : config_.sources) {
      h.update_field(fs::exists(s.location) ? file_hash(s.location) : std::string("missing"));
    }
  } else if (stage == "curate") {
    add_file(kCaptions, "ingest");
    h.update_field(config_section(config_, "curation").dump());
    h.update_field(config_section(config_, "scoring").dump());
    if (config_.curation.llm_filter) h.update_field(config_section(config_, "judge").dump());
  } else if (stage == "generate") {
    add_file(kCandidates, "curate");
    h.update_field(generation_params(config_).dump());
    h.update_field(config_.image_root().string());
  } else if (stage == "score") {
    add_file(kCandidates, "curate");
    add_file(kJournal, "generate");
    h.update_field(config_section(config_, "scoring").dump());
    h.update_field(config_.image_root().string());
  } else if (stage == "select") {
    add_file(kStage2Scores, "score");
    h.update_field(config_section(config_, "selection").dump());
  } else if (stage == "package") {
    add_file(kSelected, "select");
    add_file(kCandidates, "curate");
    add_file(kJournal, "generate");
    h.update_field(config_section(config_, "package").dump());
    h.update_field(config_hash(config_));
  } else if (stage == "report") {
    add_file(kStage1Scores, "curate");
    add_file(kStage2Scores, "score");
    add_file(kSelected, "select");
    h.update_field(config_.package.name);
  } else if (stage == "judge") {
    add_file(kSelected, "select");
    add_file(kCandidates, "curate");
    h.update_field(config_section(config_, "judge").dump());
  } else {
    throw InvalidArgument("unknown stage: " + std::string(stage));
  }
  return h.hex_digest();
}

std::vector<fs::path> Pipeline::outputs_of(std::string_view stage) const {
  const auto w = workdir();
  if (stage == "ingest") return {w / kCaptions, w / kIngestStats};
  if (stage == "curate") {
    return {w / kFilterDecisions, w / kStage1Scores, w / kCandidates, w / kCurateStats};
  }
  if (stage == "generate") return {w / kJournal};
  if (stage == "score") return {w / kStage2Scores};
  if (stage == "select") return {w / kSelected};
  if (stage == "package") {
    std::vector<fs::path> out{config_.image_root() / kManifestFile, w / kProvenance};
    if (config_.package.conversation_export) out.push_back(config_.image_root() / kConversationFile);
    return out;
  }
  if (stage == "report") return {w / kReportDir / "report.txt", w / kReportDir / "report.jsonl"};
  if (stage == "judge") return {w / kJudgeVerdicts, w / kJudgeReport, w / kJudgeMeta};
  throw InvalidArgument("unknown stage: " + std::string(stage));
}

std::string Pipeline::outputs_hash(std::string_view stage) const {
  Sha256Stream h;
  for (const auto& p : outputs_of(stage)) {
    h.update_field(p.filename().string());
    h.update_field(file_hash(p));
  }
  return h.hex_digest();
}

void Pipeline::stamp(std::string_view stage) {
  json j{{"inputs", input_hash(stage)}, {"outputs", outputs_hash(stage)}};
  write_text_atomic(workdir() / kStampDir / (std::string(stage) + ".json"), j.dump() + "\n");
}

bool Pipeline::is_fresh(std::string_view stage) const {
  const auto stamp_path = workdir() / kStampDir / (std::string(stage) + ".json");
  if (!fs::exists(stamp_path)) return false;
  for (const auto& p : outputs_of(stage)) {
    if (!fs::exists(p)) return false;
  }
  try {
    const auto j = json::parse(read_text(stamp_path));
    return j.at("inputs").get<std::string>() == input_hash(stage) &&
           j.at("outputs").get<std::string>() == outputs_hash(stage);
  } catch (const MissingArtifact&) {
    return false;
  } catch (const json::exception&) {
    return false;
  }
}

StageOutcome Pipeline::ingest() {
  if (config_.sources.empty()) throw ConfigError("sources: at least one caption source is required");
  auto result = ingest_captions(config_.sources);
  const auto total = result.pool.size();
  auto pool = deduplicate(result.pool);

  json sources = json::array();
  std::size_t rejected = 0;
  for (const auto& s : result.stats) {
    sources.push_back({{"source", s.source},
                       {"location", s.location},
                       {"ingested", s.ingested},
                       {"rejected", s.rejected},
                       {"malformed", s.malformed}});
    rejected += s.rejected;
  }
  json stats{{"sources", sources},
             {"total", total},
             {"unique", pool.size()},
             {"duplicates", total - pool.size()}};
  write_captions(artifact(kCaptions), pool);
  write_text_atomic(artifact(kIngestStats), stats.dump(2) + "\n");
  stamp("ingest");
  return {"ingest", false,
          fmt::format("ingest: {} unique captions from {} source(s), {} duplicates, {} rows rejected",
                      pool.size(), config_.sources.size(), total - pool.size(), rejected)};
}

StageOutcome Pipeline::curate() {
  const auto captions = read_captions(require(kCaptions, "ingest"));
  const auto& cur = config_.curation;

  std::vector<CaptionRecord> kept;
  std::map<std::string, std::size_t> dropped;
  LlmFilterStats llm_stats;
  std::string decisions;
  for (const auto& c : captions) {
    auto d = rule_filter(c, cur.rules);
    if (d.verdict == Verdict::keep && cur.llm_filter) d = llm_filter(c, judge_backend(), llm_stats);
    json line{{"id", c.id}, {"verdict", std::string(to_string(d.verdict))}};
    if (d.verdict == Verdict::drop) {
      line["reason"] = std::string(to_string(d.reason));
      line["detail"] = d.detail;
      ++dropped[std::string(to_string(d.reason))];
    } else {
      kept.push_back(c);
    }
    decisions += line.dump();
    decisions += '\n';
  }
  write_text_atomic(artifact(kFilterDecisions), decisions);

  auto embedding = make_embedding({});
  auto s1 = stage1_select(kept, *embedding, cur.fraction, batch_options(config_.scoring));
  if (s1.selected.empty()) throw Error("curate: no caption survived stage-1 selection");
  const auto n = std::min(cur.sample_n, s1.selected.size());
  if (n < cur.sample_n) {
    spdlog::info("curate: sample_n = {} exceeds the {} stage-1 survivors; taking all of them",
                 cur.sample_n, s1.selected.size());
  }
  auto candidates = sample_pool(s1.selected, kept, n, cur.sample_seed);

  write_scored_pairs(artifact(kStage1Scores), s1.scored);
  write_captions(artifact(kCandidates), candidates);
  json stats{{"input", captions.size()},
             {"rule_kept", kept.size()},
             {"dropped", dropped},
             {"llm_warnings", llm_stats.warnings},
             {"missing_image", s1.missing_image},
             {"embedding_failures", s1.embedding_failures},
             {"scored", s1.scored.size()},
             {"stage1_selected", s1.selected.size()},
             {"candidates", candidates.size()}};
  write_text_atomic(artifact(kCurateStats), stats.dump(2) + "\n");
  stamp("curate");
  return {"curate", false,
          fmt::format("curate: {} of {} captions passed filters, {} scored, {} kept at fraction {}, "
                      "{} candidates",
                      kept.size(), captions.size(), s1.scored.size(), s1.selected.size(),
                      cur.fraction, candidates.size())};
}

StageOutcome Pipeline::generate() {
  const auto candidates = read_captions(require(kCandidates, "curate"));
  const auto& g = config_.generation;

  // A journal only stays valid for the settings that produced it.
  const auto params = generation_params(config_).dump(2) + "\n";
  const auto params_path = artifact(kGenerationParams);
  if (fs::exists(artifact(kJournal)) &&
      (!fs::exists(params_path) || read_text(params_path) != params)) {
    spdlog::warn("generate: generation settings changed; discarding the previous journal and images");
    fs::remove(artifact(kJournal));
    fs::remove_all(config_.image_root() / "images");
  }
  write_text_atomic(params_path, params);

  const auto tasks =
      plan_tasks(candidates, GenConfig{g.global_seed, g.steps, g.width, g.height});
  GenerationJournal journal(artifact(kJournal), g.fsync_journal);
  RunOptions opts;
  opts.workers = g.workers;
  opts.max_attempts = g.max_attempts;
  opts.image_root = config_.image_root();
  const auto summary = run_generation(tasks, image_gen(), journal, opts);
  if (summary.failed > 0) spdlog::warn("generate: {} task(s) out of attempts", summary.failed);
  stamp("generate");
  return {"generate", false,
          fmt::format("generate: {} generated, {} already done, {} failed, {} backend calls",
                      summary.done, summary.skipped, summary.failed, summary.backend_calls)};
}

StageOutcome Pipeline::score() {
  const auto candidates = read_captions(require(kCandidates, "curate"));
  const auto view = resume_view(require(kJournal, "generate"));
  std::vector<ScoreInput> inputs;
  std::size_t not_done = 0;
  for (const auto& c : candidates) {
    const auto it = view.find(c.id);
    if (it == view.end() || it->second.status != TaskStatus::done || !it->second.image_ref) {
      ++not_done;
      continue;
    }
    inputs.push_back({c.id, *it->second.image_ref, c.text});
  }
  auto embedding = make_embedding(config_.image_root());
  const auto result =
      batch_score(inputs, *embedding, Stage::stage2_synth, batch_options(config_.scoring));
  write_scored_pairs(artifact(kStage2Scores), result.pairs);
  stamp("score");
  return {"score", false,
          fmt::format("score: {} synthetic pairs scored, {} skipped, {} without a finished image",
                      result.pairs.size(), result.skipped, not_done)};
}

StageOutcome Pipeline::select() {
  const auto scored = read_scored_pairs(require(kStage2Scores, "score"));
  const auto selected = top_k(scored, config_.selection.top_k);
  write_scored_pairs(artifact(kSelected), selected);
  stamp("select");
  return {"select", false,
          fmt::format("select: kept {} of {} pairs, mean clip score {:.4f}", selected.size(),
                      scored.size(), mean_score(selected))};
}

StageOutcome Pipeline::package() {
  const auto selected = read_scored_pairs(require(kSelected, "select"));
  const auto candidates = read_captions(require(kCandidates, "curate"));
  const auto view = resume_view(require(kJournal, "generate"));

  ManifestInfo info;
  info.name = config_.package.name;
  info.created_at = config_.package.created_at;
  info.conversation_export = config_.package.conversation_export;
  info.provenance = {image_gen().id(), make_embedding(config_.image_root())->id(),
                     config_hash(config_), config_.generation.global_seed};
  const auto root = config_.image_root();
  const auto manifest = build_manifest(selected, candidates, root, info);
  const auto check = verify_provenance(manifest, view);
  json prov{{"ok", check.ok}, {"checked", manifest.entries.size()}, {"violations", check.violations}};
  write_text_atomic(artifact(kProvenance), prov.dump(2) + "\n");
  if (!check.ok) {
    throw Error(fmt::format("package: {} manifest image(s) were not produced by this run; see {}",
                            check.violations.size(), artifact(kProvenance).string()));
  }
  write_text_atomic(root / kManifestFile, serialize_manifest(manifest));
  if (info.conversation_export) {
    write_text_atomic(root / kConversationFile, conversation_export(manifest));
  }
  stamp("package");
  return {"package", false,
          fmt::format("package: {} pairs written to {}", manifest.entries.size(),
                      (root / kManifestFile).string())};
}

StageOutcome Pipeline::report() {
  std::vector<DatasetScores> datasets;
  datasets.push_back({"Raw pairs", read_scored_pairs(require(kStage1Scores, "curate"))});
  datasets.push_back({"Synthetic pool", read_scored_pairs(require(kStage2Scores, "score"))});
  datasets.push_back({config_.package.name + " curated",
                      read_scored_pairs(require(kSelected, "select"))});
  const auto rep = stats_report(datasets);
  for (const auto& w : rep.warnings) spdlog::warn("report: {}", w);
  write_stats_report(rep, artifact(kReportDir));
  stamp("report");
  return {"report", false,
          fmt::format("report: {} dataset rows written to {}", rep.histograms.size(),
                      artifact(kReportDir).string())};
}

StageOutcome Pipeline::judge() {
  const auto selected = read_scored_pairs(require(kSelected, "select"));
  const auto candidates = read_captions(require(kCandidates, "curate"));
  const auto by_id = index_by_id(candidates);

  std::vector<ScoredPair> eligible;
  for (const auto& p : selected) {
    const auto it = by_id.find(p.caption_id);
    if (it != by_id.end() && it->second->raw_image_ref) eligible.push_back(p);
  }
  if (eligible.empty()) throw Error("judge: no selected pair has a raw image to compare against");
  const auto n = std::min(config_.judge.sample_n, eligible.size());
  const auto ids = sample_ids(eligible, n, config_.judge.seed);

  std::unordered_map<std::string, const ScoredPair*> pair_by_id;
  for (const auto& p : eligible) pair_by_id.emplace(p.caption_id, &p);
  std::vector<JudgeItem> items;
  items.reserve(ids.size());
  for (const auto& id : ids) {
    const auto* rec = by_id.at(id);
    items.push_back({id, rec->text, config_.image_root() / pair_by_id.at(id)->image_ref,
                     fs::path(*rec->raw_image_ref)});
  }

  JudgeOptions opts;
  opts.max_in_flight = config_.judge.max_in_flight;
  auto& backend = judge_backend();
  const auto tally = run_match_vote(items, backend, config_.judge.seed, opts);
  write_verdicts(artifact(kJudgeVerdicts), tally.verdicts);
  const std::vector<std::pair<std::string, Tally>> rows{{config_.package.name, tally}};
  write_text_atomic(artifact(kJudgeReport), tally_report(rows));
  json meta{{"judge_backend", backend.id()},
            {"template_hash", judge_template_hash()},
            {"seed", config_.judge.seed},
            {"sample", tally.sample()},
            {"gen_wins", tally.gen_wins},
            {"raw_wins", tally.raw_wins},
            {"skipped", tally.skipped}};
  write_text_atomic(artifact(kJudgeMeta), meta.dump(2) + "\n");
  stamp("judge");
  return {"judge", false,
          fmt::format("judge: {} items, generated wins {}, raw wins {}, skipped {}", tally.sample(),
                      tally.gen_wins, tally.raw_wins, tally.skipped)};
}

StageOutcome Pipeline::run_stage(std::string_view name) {
  if (name == "ingest") return ingest();
  if (name == "curate") return curate();
  if (name == "generate") return generate();
  if (name == "score") return score();
  if (name == "select") return select();
  if (name == "package") return package();
  if (name == "report") return report();
  if (name == "judge") return judge();
  throw InvalidArgument("unknown stage: " + std::string(name));
}

std::vector<StageOutcome> Pipeline::run() {
  std::vector<StageOutcome> out;
  for (const auto stage : kStageNames) {
    if (is_fresh(stage)) {
      spdlog::info("{}: up to date", stage);
      out.push_back({std::string(stage), true, fmt::format("{}: up to date", stage)});
      continue;
    }
    out.push_back(run_stage(stage));
  }
  return out;
}

}  // namespace synthcurate
