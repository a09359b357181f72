#include <httplib.h>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "synthcurate/errors.hpp"
#include "synthcurate/hashing.hpp"
#include "synthcurate/http_backends.hpp"
#include "synthcurate/mock_diffusion.hpp"

namespace synthcurate {

using nlohmann::json;

HttpEndpoint HttpEndpoint::from_url(std::string url) {
  HttpEndpoint ep;
  while (!url.empty() && url.back() == '/') url.pop_back();
  ep.base_url = std::move(url);
  if (const char* token = std::getenv("SYNTH_BACKEND_TOKEN"); token != nullptr && *token != '\0') {
    ep.bearer_token = token;
  }
  return ep;
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("backend url lacks a scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, ""};
  return {url.substr(0, path), url.substr(path)};
}

json post_json(const HttpEndpoint& ep, const std::string& route, const json& body) {
  const auto [origin, prefix] = split_url(ep.base_url);
  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(ep.timeout);
  client.set_write_timeout(ep.timeout);
  if (ep.bearer_token) client.set_bearer_token_auth(*ep.bearer_token);

  auto res = client.Post(prefix + route, body.dump(), "application/json");
  if (!res) {
    throw BackendUnreachable(fmt::format("POST {}{}: {}", ep.base_url, route,
                                         httplib::to_string(res.error())));
  }
  if (res->status < 200 || res->status >= 300) {
    throw BackendError(fmt::format("POST {}{}: HTTP {}: {}", ep.base_url, route, res->status,
                                   res->body.substr(0, 200)));
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw BackendError(fmt::format("POST {}{}: response is not JSON: {}", ep.base_url, route, e.what()));
  }
}

std::vector<EmbeddingVector> parse_vectors(const json& j, std::size_t expected) {
  try {
    const auto& vectors = j.at("vectors");
    const auto dim = j.at("dim").get<std::size_t>();
    if (vectors.size() != expected) {
      throw BackendError(fmt::format("embed: {} vectors for {} inputs", vectors.size(), expected));
    }
    std::vector<EmbeddingVector> out;
    out.reserve(expected);
    for (const auto& v : vectors) {
      EmbeddingVector e{v.get<std::vector<double>>()};
      if (e.dim() != dim) throw BackendError("embed: vector length disagrees with advertised dim");
      out.push_back(std::move(e));
    }
    return out;
  } catch (const json::exception& e) {
    throw BackendError(std::string("embed: malformed response: ") + e.what());
  }
}

}  // namespace

HttpEmbeddingBackend::HttpEmbeddingBackend(HttpEndpoint endpoint, std::filesystem::path image_root)
    : endpoint_(std::move(endpoint)), image_root_(std::move(image_root)) {}

std::string HttpEmbeddingBackend::id() const { return "http-embed@" + endpoint_.base_url; }

std::vector<EmbeddingVector> HttpEmbeddingBackend::embed_text(std::span<const std::string> texts) {
  if (texts.empty()) return {};
  json body;
  body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  return parse_vectors(post_json(endpoint_, "/v1/embed", body), texts.size());
}

std::vector<EmbeddingVector> HttpEmbeddingBackend::embed_image(std::span<const std::string> locators) {
  if (locators.empty()) return {};
  json images = json::array();
  for (const auto& loc : locators) {
    images.push_back(base64_encode(read_file_bytes(resolve_locator(image_root_, loc))));
  }
  json body;
  body["images_b64"] = std::move(images);
  return parse_vectors(post_json(endpoint_, "/v1/embed", body), locators.size());
}

HttpImageGenBackend::HttpImageGenBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::string HttpImageGenBackend::id() const { return "http-generate@" + endpoint_.base_url; }

GeneratedImage HttpImageGenBackend::generate(const GenerationRequest& request) {
  const json body = {{"prompt", request.prompt},
                     {"seed", request.seed},
                     {"steps", request.steps},
                     {"width", request.width},
                     {"height", request.height}};
  const auto res = post_json(endpoint_, "/v1/generate", body);
  try {
    GeneratedImage img;
    img.format = res.value("format", std::string("png"));
    img.bytes = base64_decode(res.at("image_b64").get<std::string>());
    if (img.bytes.empty()) throw BackendError("generate: empty image");
    return img;
  } catch (const json::exception& e) {
    throw BackendError(std::string("generate: malformed response: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw BackendError(std::string("generate: ") + e.what());
  }
}

HttpJudgeBackend::HttpJudgeBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

std::string HttpJudgeBackend::id() const { return "http-judge@" + endpoint_.base_url; }

JudgeResponse HttpJudgeBackend::judge(const std::string& prompt,
                                      std::span<const std::uint8_t> image_a,
                                      std::span<const std::uint8_t> image_b) {
  const json body = {{"prompt", prompt},
                     {"image_a_b64", base64_encode(image_a)},
                     {"image_b_b64", base64_encode(image_b)}};
  const auto res = post_json(endpoint_, "/v1/judge", body);
  try {
    JudgeResponse out;
    out.choice = parse_judge_choice(res.at("choice").get<std::string>());
    out.raw = res.value("raw", std::string());
    return out;
  } catch (const json::exception& e) {
    throw BackendError(std::string("judge: malformed response: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

struct MockBackendServer::Impl {
  MockServerOptions options;
  httplib::Server server;
  std::thread thread;
  std::string host = "127.0.0.1";
  int port = 0;
  std::atomic<std::size_t> generate_calls{0};

  static void fail(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
  }

  bool authorized(const httplib::Request& req, httplib::Response& res) {
    if (!options.required_token) return true;
    if (req.get_header_value("Authorization") == "Bearer " + *options.required_token) return true;
    fail(res, 401, "missing or wrong bearer token");
    return false;
  }

  void install_routes() {
    server.Get("/v1/meta", [this](const httplib::Request&, httplib::Response& res) {
      const json meta = {{"endpoints", {"/v1/embed", "/v1/generate", "/v1/judge", "/v1/meta"}},
                         {"models",
                          {{"embed", "mock-embedding-512"},
                           {"generate", "mock-diffusion"},
                           {"judge", MockJudge(options.judge_mode).id()}}},
                         {"dim", kMockEmbeddingDim},
                         {"generation_defaults", {{"sampler", "forward-noise"}, {"guidance", nullptr}}}};
      res.set_content(meta.dump(), "application/json");
    });

    server.Post("/v1/embed", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      try {
        const auto body = json::parse(req.body);
        json vectors = json::array();
        if (body.contains("texts")) {
          for (const auto& t : body["texts"]) vectors.push_back(mock_embed_text(t.get<std::string>()).values);
        } else if (body.contains("images_b64")) {
          for (const auto& b : body["images_b64"]) {
            vectors.push_back(mock_embed_image(base64_decode(b.get<std::string>())).values);
          }
        } else {
          return fail(res, 400, "expected \"texts\" or \"images_b64\"");
        }
        res.set_content(json{{"vectors", std::move(vectors)}, {"dim", kMockEmbeddingDim}}.dump(),
                        "application/json");
      } catch (const std::exception& e) {
        fail(res, 422, e.what());
      }
    });

    server.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      generate_calls.fetch_add(1);
      try {
        const auto body = json::parse(req.body);
        if (options.generate_latency.count() > 0) std::this_thread::sleep_for(options.generate_latency);
        const auto png = mock_generate(body.at("prompt").get<std::string>(),
                                       body.at("seed").get<std::uint64_t>(), body.at("steps").get<int>(),
                                       body.at("width").get<int>(), body.at("height").get<int>());
        res.set_content(json{{"image_b64", base64_encode(png)}, {"format", "png"}}.dump(),
                        "application/json");
      } catch (const std::exception& e) {
        fail(res, 422, e.what());
      }
    });

    server.Post("/v1/judge", [this](const httplib::Request& req, httplib::Response& res) {
      if (!authorized(req, res)) return;
      try {
        const auto body = json::parse(req.body);
        const auto a = base64_decode(body.at("image_a_b64").get<std::string>());
        const auto b = base64_decode(body.at("image_b_b64").get<std::string>());
        MockJudge judge(options.judge_mode);
        const auto answer = judge.judge(body.at("prompt").get<std::string>(), a, b);
        res.set_content(json{{"choice", answer.choice == JudgeChoice::A ? "A" : "B"},
                             {"raw", answer.raw}}
                            .dump(),
                        "application/json");
      } catch (const std::exception& e) {
        fail(res, 422, e.what());
      }
    });
  }
};

MockBackendServer::MockBackendServer(MockServerOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->install_routes();
}

MockBackendServer::~MockBackendServer() { stop(); }

int MockBackendServer::start(const std::string& host, int port) {
  impl_->host = host;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
    impl_->port = port;
  }
  if (impl_->port <= 0) throw Error("cannot bind mock server on " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void MockBackendServer::listen_blocking(const std::string& host, int port) {
  impl_->host = host;
  impl_->port = port;
  if (!impl_->server.listen(host, port)) throw Error(fmt::format("cannot listen on {}:{}", host, port));
}

void MockBackendServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockBackendServer::url() const {
  return fmt::format("http://{}:{}", impl_->host, impl_->port);
}

std::size_t MockBackendServer::generate_calls() const { return impl_->generate_calls.load(); }

}  // namespace synthcurate
