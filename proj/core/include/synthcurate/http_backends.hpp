#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "synthcurate/backends.hpp"
#include "synthcurate/judge.hpp"

namespace synthcurate {

// Where a wire-protocol backend lives. `base_url` is scheme://host[:port][/prefix].
struct HttpEndpoint {
  std::string base_url;
  std::optional<std::string> bearer_token;
  std::chrono::seconds timeout{120};

  // Picks up SYNTH_BACKEND_TOKEN from the environment when set.
  static HttpEndpoint from_url(std::string url);
};

// POST /v1/embed  {"texts": [...]} | {"images_b64": [...]}  ->  {"vectors": [[...]], "dim": n}
class HttpEmbeddingBackend final : public EmbeddingBackend {
 public:
  HttpEmbeddingBackend(HttpEndpoint endpoint, std::filesystem::path image_root = {});

  std::string id() const override;
  std::vector<EmbeddingVector> embed_text(std::span<const std::string> texts) override;
  std::vector<EmbeddingVector> embed_image(std::span<const std::string> locators) override;

 private:
  HttpEndpoint endpoint_;
  std::filesystem::path image_root_;
};

// POST /v1/generate {"prompt","seed","steps","width","height"} -> {"image_b64","format"}
class HttpImageGenBackend final : public ImageGenBackend {
 public:
  explicit HttpImageGenBackend(HttpEndpoint endpoint);

  std::string id() const override;
  GeneratedImage generate(const GenerationRequest& request) override;

 private:
  HttpEndpoint endpoint_;
};

// POST /v1/judge {"prompt","image_a_b64","image_b_b64"} -> {"choice": "A"|"B", "raw"}
class HttpJudgeBackend final : public JudgeBackend {
 public:
  explicit HttpJudgeBackend(HttpEndpoint endpoint);

  std::string id() const override;
  JudgeResponse judge(const std::string& prompt, std::span<const std::uint8_t> image_a,
                      std::span<const std::uint8_t> image_b) override;

 private:
  HttpEndpoint endpoint_;
};

struct MockServerOptions {
  MockJudge::Mode judge_mode = MockJudge::Mode::content;
  std::chrono::milliseconds generate_latency{0};
  std::optional<std::string> required_token;
};

// Serves the deterministic mock backends over the wire protocol, plus
// GET /v1/meta. Runs on a background thread until stop() or destruction.
class MockBackendServer {
 public:
  explicit MockBackendServer(MockServerOptions options = {});
  ~MockBackendServer();
  MockBackendServer(const MockBackendServer&) = delete;
  MockBackendServer& operator=(const MockBackendServer&) = delete;

  // Binds host:port (port 0 picks a free one) and returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks serving on the calling thread.
  void listen_blocking(const std::string& host, int port);
  void stop();

  std::string url() const;
  std::size_t generate_calls() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace synthcurate
