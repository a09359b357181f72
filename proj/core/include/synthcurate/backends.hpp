#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "synthcurate/embedding.hpp"

namespace synthcurate {

using Bytes = std::vector<std::uint8_t>;

// Text and image encoders sharing one embedding space. Implementations must
// be safe to call from several threads at once.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual std::string id() const = 0;
  virtual std::vector<EmbeddingVector> embed_text(std::span<const std::string> texts) = 0;
  // Locators are filesystem paths (absolute, or relative to the backend's root).
  virtual std::vector<EmbeddingVector> embed_image(std::span<const std::string> locators) = 0;
};

struct GenerationRequest {
  std::string prompt;
  std::uint64_t seed = 0;
  int steps = 60;
  int width = 1024;
  int height = 1024;
};

struct GeneratedImage {
  Bytes bytes;
  std::string format = "png";
};

class ImageGenBackend {
 public:
  virtual ~ImageGenBackend() = default;

  virtual std::string id() const = 0;
  virtual GeneratedImage generate(const GenerationRequest& request) = 0;
};

enum class JudgeChoice { A, B };

struct JudgeResponse {
  JudgeChoice choice = JudgeChoice::A;
  std::string raw;
};

// A judge must pick exactly one of the two images. Responses that cannot be
// parsed as "A" or "B" are reported as BackendError, never coerced.
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;

  virtual std::string id() const = 0;
  virtual JudgeResponse judge(const std::string& prompt, std::span<const std::uint8_t> image_a,
                              std::span<const std::uint8_t> image_b) = 0;
};

// Strict "A"/"B" parse after trimming whitespace; throws BackendError otherwise.
JudgeChoice parse_judge_choice(std::string_view answer);

}  // namespace synthcurate
