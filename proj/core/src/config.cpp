#include "synthcurate/config.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iterator>

#include "synthcurate/errors.hpp"
#include "synthcurate/hashing.hpp"
#include "synthcurate/judge.hpp"

namespace synthcurate {

using nlohmann::json;

std::filesystem::path PipelineConfig::image_root() const {
  return paths.image_root.is_absolute() ? paths.image_root : paths.workdir / paths.image_root;
}

namespace {

template <typename T>
void read_field(const json& obj, const char* section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("{}.{}: wrong type", section, key));
  }
}

BackendSpec parse_backend(const json& j, const std::string& field) {
  BackendSpec spec;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "mock") return spec;
    if (s.starts_with("http://") || s.starts_with("https://")) {
      spec.kind = BackendSpec::Kind::http;
      spec.url = s;
      return spec;
    }
    throw ConfigError(fmt::format("{}: expected \"mock\" or an http(s) URL, got \"{}\"", field, s));
  }
  if (!j.is_object()) throw ConfigError(field + ": expected a string or an object");
  const auto kind = j.value("kind", std::string("mock"));
  if (kind == "mock") {
    spec.kind = BackendSpec::Kind::mock;
  } else if (kind == "http") {
    spec.kind = BackendSpec::Kind::http;
    spec.url = j.value("url", std::string());
    if (spec.url.empty()) throw ConfigError(field + ".url: required for http backends");
  } else {
    throw ConfigError(fmt::format("{}.kind: unknown backend kind \"{}\"", field, kind));
  }
  spec.mock_mode = j.value("mode", spec.mock_mode);
  spec.latency_ms = j.value("latency_ms", 0);
  return spec;
}

json backend_json(const BackendSpec& b) {
  json j;
  j["kind"] = b.kind == BackendSpec::Kind::mock ? "mock" : "http";
  if (b.kind == BackendSpec::Kind::http) j["url"] = b.url;
  j["mode"] = b.mock_mode;
  j["latency_ms"] = b.latency_ms;
  return j;
}

}  // namespace

PipelineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");

  PipelineConfig cfg;
  if (root.contains("sources")) {
    if (!root["sources"].is_array()) throw ConfigError("sources: expected an array");
    std::size_t i = 0;
    for (const auto& s : root["sources"]) {
      const auto field = fmt::format("sources[{}]", i++);
      SourceSpec spec;
      try {
        spec.format = parse_source_format(s.value("format", std::string("jsonl")));
        spec.source_tag = SourceTag::parse(s.at("source_tag").get<std::string>());
        std::filesystem::path loc = s.at("location").get<std::string>();
        spec.location = loc.is_relative() ? base_dir / loc : loc;
      } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", field, e.what()));
      } catch (const InvalidArgument& e) {
        throw ConfigError(fmt::format("{}: {}", field, e.what()));
      }
      cfg.sources.push_back(std::move(spec));
    }
  }

  if (root.contains("curation")) {
    const auto& c = root["curation"];
    read_field(c, "curation", "fraction", cfg.curation.fraction);
    read_field(c, "curation", "llm_filter", cfg.curation.llm_filter);
    read_field(c, "curation", "sample_n", cfg.curation.sample_n);
    read_field(c, "curation", "sample_seed", cfg.curation.sample_seed);
    if (c.contains("rules")) {
      const auto& r = c["rules"];
      read_field(r, "curation.rules", "min_tokens", cfg.curation.rules.min_tokens);
      read_field(r, "curation.rules", "max_tokens", cfg.curation.rules.max_tokens);
      read_field(r, "curation.rules", "repetition_ratio", cfg.curation.rules.repetition_ratio);
      read_field(r, "curation.rules", "symbol_ratio", cfg.curation.rules.symbol_ratio);
      read_field(r, "curation.rules", "promo_tokens", cfg.curation.rules.promo_tokens);
    }
  }
  if (root.contains("scoring")) {
    const auto& s = root["scoring"];
    if (s.contains("backend")) cfg.scoring.backend = parse_backend(s["backend"], "scoring.backend");
    read_field(s, "scoring", "batch_size", cfg.scoring.batch_size);
    read_field(s, "scoring", "max_in_flight", cfg.scoring.max_in_flight);
    read_field(s, "scoring", "max_attempts", cfg.scoring.max_attempts);
    read_field(s, "scoring", "backoff_ms", cfg.scoring.backoff_ms);
  }
  if (root.contains("generation")) {
    const auto& g = root["generation"];
    if (g.contains("backend")) cfg.generation.backend = parse_backend(g["backend"], "generation.backend");
    read_field(g, "generation", "steps", cfg.generation.steps);
    read_field(g, "generation", "width", cfg.generation.width);
    read_field(g, "generation", "height", cfg.generation.height);
    read_field(g, "generation", "workers", cfg.generation.workers);
    read_field(g, "generation", "global_seed", cfg.generation.global_seed);
    read_field(g, "generation", "max_attempts", cfg.generation.max_attempts);
    read_field(g, "generation", "fsync_journal", cfg.generation.fsync_journal);
  }
  if (root.contains("selection")) {
    read_field(root["selection"], "selection", "top_k", cfg.selection.top_k);
  }
  if (root.contains("judge")) {
    const auto& j = root["judge"];
    if (j.contains("backend")) cfg.judge.backend = parse_backend(j["backend"], "judge.backend");
    read_field(j, "judge", "sample_n", cfg.judge.sample_n);
    read_field(j, "judge", "seed", cfg.judge.seed);
    read_field(j, "judge", "max_in_flight", cfg.judge.max_in_flight);
  }
  if (root.contains("package")) {
    const auto& p = root["package"];
    read_field(p, "package", "name", cfg.package.name);
    read_field(p, "package", "created_at", cfg.package.created_at);
    read_field(p, "package", "conversation_export", cfg.package.conversation_export);
  }
  std::string workdir = "work";
  std::string image_root = "dataset";
  if (root.contains("paths")) {
    read_field(root["paths"], "paths", "workdir", workdir);
    read_field(root["paths"], "paths", "image_root", image_root);
  }
  cfg.paths.workdir = std::filesystem::path(workdir).is_relative() ? base_dir / workdir
                                                                   : std::filesystem::path(workdir);
  cfg.paths.image_root = image_root;
  return cfg;
}

void apply_overrides(PipelineConfig& config, const ConfigOverrides& overrides) {
  if (overrides.workdir) config.paths.workdir = *overrides.workdir;
  if (overrides.seed) config.generation.global_seed = *overrides.seed;
  if (overrides.backend_url) {
    for (auto* b : {&config.scoring.backend, &config.generation.backend, &config.judge.backend}) {
      b->kind = BackendSpec::Kind::http;
      b->url = *overrides.backend_url;
    }
  }
}

PipelineConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto cfg = parse_config(text, std::filesystem::absolute(path).parent_path());
  apply_overrides(cfg, overrides);
  validate(cfg);
  return cfg;
}

void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(c.curation.fraction > 0.0 && c.curation.fraction <= 1.0)) {
    fail(fmt::format("curation.fraction = {} is outside (0, 1]", c.curation.fraction));
  }
  if (c.curation.sample_n < 1) fail("curation.sample_n must be >= 1");
  if (c.curation.rules.min_tokens > c.curation.rules.max_tokens) {
    fail("curation.rules.min_tokens must not exceed curation.rules.max_tokens");
  }
  if (c.curation.rules.repetition_ratio < 0.0 || c.curation.rules.repetition_ratio > 1.0) {
    fail("curation.rules.repetition_ratio must lie in [0, 1]");
  }
  if (c.curation.rules.symbol_ratio < 0.0 || c.curation.rules.symbol_ratio > 1.0) {
    fail("curation.rules.symbol_ratio must lie in [0, 1]");
  }
  if (c.scoring.batch_size < 1) fail("scoring.batch_size must be >= 1");
  if (c.scoring.max_in_flight < 1) fail("scoring.max_in_flight must be >= 1");
  if (c.scoring.max_attempts < 1) fail("scoring.max_attempts must be >= 1");
  if (c.scoring.backoff_ms < 0) fail("scoring.backoff_ms must be >= 0");
  if (c.generation.steps < 1) fail(fmt::format("generation.steps = {} must be >= 1", c.generation.steps));
  if (c.generation.width < 8 || c.generation.height < 8) {
    fail(fmt::format("generation.width/height = {}x{} must both be >= 8", c.generation.width,
                     c.generation.height));
  }
  if (c.generation.workers < 1) fail("generation.workers must be >= 1");
  if (c.generation.max_attempts < 1) fail("generation.max_attempts must be >= 1");
  if (c.generation.backend.latency_ms < 0) fail("generation.backend.latency_ms must be >= 0");
  if (c.selection.top_k < 1) fail("selection.top_k must be >= 1");
  if (c.judge.sample_n < 1) fail("judge.sample_n must be >= 1");
  if (c.judge.max_in_flight < 1) fail("judge.max_in_flight must be >= 1");
  try {
    (void)parse_mock_judge_mode(c.judge.backend.mock_mode);
  } catch (const InvalidArgument& e) {
    fail(std::string("judge.backend.mode: ") + e.what());
  }
  if (c.package.name.empty()) fail("package.name must not be empty");
  // The HTTP client is built without TLS.
  const std::pair<const char*, const BackendSpec*> backends[] = {
      {"scoring.backend", &c.scoring.backend},
      {"generation.backend", &c.generation.backend},
      {"judge.backend", &c.judge.backend}};
  for (const auto& [field, b] : backends) {
    if (b->kind == BackendSpec::Kind::http && !b->url.starts_with("http://")) {
      fail(fmt::format("{}.url = \"{}\": only http:// URLs are supported", field, b->url));
    }
  }
}

std::string canonical_config(const PipelineConfig& c) {
  json j;
  json sources = json::array();
  for (const auto& s : c.sources) {
    sources.push_back({{"format", std::string(to_string(s.format))},
                       {"location", s.location.lexically_normal().string()},
                       {"source_tag", s.source_tag.str()}});
  }
  j["sources"] = std::move(sources);
  j["curation"] = {{"fraction", c.curation.fraction},
                   {"llm_filter", c.curation.llm_filter},
                   {"sample_n", c.curation.sample_n},
                   {"sample_seed", c.curation.sample_seed},
                   {"rules",
                    {{"min_tokens", c.curation.rules.min_tokens},
                     {"max_tokens", c.curation.rules.max_tokens},
                     {"repetition_ratio", c.curation.rules.repetition_ratio},
                     {"symbol_ratio", c.curation.rules.symbol_ratio},
                     {"promo_tokens", c.curation.rules.promo_tokens}}}};
  j["scoring"] = {{"backend", backend_json(c.scoring.backend)},
                  {"batch_size", c.scoring.batch_size},
                  {"max_in_flight", c.scoring.max_in_flight},
                  {"max_attempts", c.scoring.max_attempts},
                  {"backoff_ms", c.scoring.backoff_ms}};
  j["generation"] = {{"backend", backend_json(c.generation.backend)},
                     {"steps", c.generation.steps},
                     {"width", c.generation.width},
                     {"height", c.generation.height},
                     {"workers", c.generation.workers},
                     {"global_seed", c.generation.global_seed},
                     {"max_attempts", c.generation.max_attempts},
                     {"fsync_journal", c.generation.fsync_journal}};
  j["selection"] = {{"top_k", c.selection.top_k}};
  j["judge"] = {{"backend", backend_json(c.judge.backend)},
                {"sample_n", c.judge.sample_n},
                {"seed", c.judge.seed},
                {"max_in_flight", c.judge.max_in_flight}};
  j["package"] = {{"name", c.package.name},
                  {"created_at", c.package.created_at},
                  {"conversation_export", c.package.conversation_export}};
  return j.dump();
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(canonical_config(config)); }

}  // namespace synthcurate
