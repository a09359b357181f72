// synthcurate command-line driver.
//
//   synthcurate <stage> --config FILE [--workdir DIR] [--seed N] [--backend-url URL]
//   synthcurate run --config FILE
//   synthcurate fixture --out DIR [--count N]
//   synthcurate serve-mock [--port N]
//
// Exit codes: 0 success, 1 stage failure, 2 configuration error.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdio>
#include <iostream>

#include "synthcurate/config.hpp"
#include "synthcurate/errors.hpp"
#include "synthcurate/fixtures.hpp"
#include "synthcurate/http_backends.hpp"
#include "synthcurate/judge.hpp"
#include "synthcurate/pipeline.hpp"

namespace sc = synthcurate;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStageFailure = 1;
constexpr int kExitConfig = 2;

struct StageArgs {
  std::string config;
  std::string workdir;
  std::uint64_t seed = 0;
  std::string backend_url;
};

void add_stage_options(CLI::App* cmd, StageArgs& args) {
  cmd->add_option("-c,--config", args.config, "Pipeline config file (JSON)")->required();
  cmd->add_option("--workdir", args.workdir, "Override paths.workdir");
  cmd->add_option("--seed", args.seed, "Override generation.global_seed");
  cmd->add_option("--backend-url", args.backend_url,
                  "Send scoring, generation and judging to this HTTP backend");
}

int run_stage(const std::string& stage, const StageArgs& args, CLI::App* cmd) {
  sc::PipelineConfig config;
  try {
    sc::ConfigOverrides ov;
    if (!args.workdir.empty()) ov.workdir = std::filesystem::absolute(args.workdir);
    if (cmd->count("--seed")) ov.seed = args.seed;
    if (!args.backend_url.empty()) ov.backend_url = args.backend_url;
    config = sc::load_config(args.config, ov);
  } catch (const sc::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  }

  try {
    sc::Pipeline pipeline(std::move(config));
    if (stage == "run") {
      for (const auto& outcome : pipeline.run()) std::cout << outcome.summary << '\n';
    } else {
      std::cout << pipeline.run_stage(stage).summary << '\n';
    }
    std::cout.flush();
    return kExitOk;
  } catch (const sc::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", stage, e.what());
    return kExitStageFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("synthcurate");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%Y-%m-%dT%H:%M:%S.%e %^%l%$ %v");
  if (const char* level = std::getenv("SYNTHCURATE_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }

  CLI::App app{"Caption-first synthetic image-text dataset curation"};
  app.require_subcommand(1);

  static constexpr const char* kStages[] = {"ingest", "curate",  "generate", "score", "select",
                                            "judge",  "package", "report",   "run"};
  static constexpr const char* kHelp[] = {
      "Read caption sources into the workdir pool",
      "Filter captions and keep the best-aligned fraction against raw images",
      "Generate one image per candidate caption (resumable)",
      "Score generated images against their captions",
      "Keep the top-k synthetic pairs",
      "Pairwise judge: generated vs raw image for a sample of selected captions",
      "Write the dataset manifest and verify provenance",
      "Write the alignment statistics report",
      "Run ingest through report, skipping up-to-date stages"};
  StageArgs stage_args;
  std::string chosen;
  for (std::size_t i = 0; i < std::size(kStages); ++i) {
    auto* cmd = app.add_subcommand(kStages[i], kHelp[i]);
    add_stage_options(cmd, stage_args);
    cmd->callback([&chosen, name = std::string(kStages[i])] { chosen = name; });
  }

  sc::FixtureOptions fx;
  std::string fixture_out;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic caption corpus with mock images");
  fixture->add_option("-o,--out", fixture_out, "Output directory")->required();
  fixture->add_option("-n,--count", fx.count, "Number of caption rows");
  fixture->add_option("--seed", fx.seed, "Corpus seed");
  fixture->add_option("--image-size", fx.image_size, "Side length of raw and generated images");
  fixture->add_option("--top-k", fx.top_k, "selection.top_k written to the config");
  fixture->add_option("--workers", fx.workers, "generation.workers written to the config");
  fixture->add_option("--latency-ms", fx.mock_latency_ms, "Mock generation latency per image");

  std::string host = "127.0.0.1";
  int port = 8731;
  std::string judge_mode = "content";
  auto* serve = app.add_subcommand("serve-mock", "Serve the mock backends over the HTTP protocol");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--judge-mode", judge_mode, "content | always_a | always_b");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  if (*fixture) {
    try {
      const auto out = sc::write_fixture(fixture_out, fx);
      std::cout << fmt::format("fixture: {} caption rows, config at {}", out.rows, out.config.string())
                << '\n';
      return kExitOk;
    } catch (const std::exception& e) {
      spdlog::error("fixture: {}", e.what());
      return kExitStageFailure;
    }
  }
  if (*serve) {
    try {
      sc::MockServerOptions opts;
      opts.judge_mode = sc::parse_mock_judge_mode(judge_mode);
      if (const char* token = std::getenv("SYNTH_BACKEND_TOKEN")) opts.required_token = token;
      sc::MockBackendServer server(opts);
      spdlog::info("serving mock backends on http://{}:{}", host, port);
      server.listen_blocking(host, port);
      return kExitOk;
    } catch (const std::exception& e) {
      spdlog::error("serve-mock: {}", e.what());
      return kExitStageFailure;
    }
  }

  CLI::App* cmd = app.get_subcommands().front();
  return run_stage(chosen, stage_args, cmd);
}
