#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthcurate/backends.hpp"
#include "synthcurate/embedding.hpp"

namespace synthcurate {

// Variance schedule beta_1..beta_T and its cumulative products
// alpha_bar_t = prod_{i<=t} (1 - beta_i).
class NoiseSchedule {
 public:
  enum class Validation {
    strict,      // 0 < beta < 1
    allow_zero,  // 0 <= beta < 1; the no-noise limit, for tests
  };

  explicit NoiseSchedule(std::vector<double> betas, Validation validation = Validation::strict);

  static NoiseSchedule linear(std::size_t steps, double beta_start, double beta_end);

  std::size_t steps() const noexcept { return betas_.size(); }
  // 1-based, like the step index of the forward chain.
  double beta(std::size_t t) const;
  double alpha_bar(std::size_t t) const;
  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

 private:
  void check_step(std::size_t t) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

double alpha_bar(const NoiseSchedule& schedule, std::size_t t);

// The x of the forward process: a height x width grid of reals.
struct SignalTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  SignalTensor() = default;
  SignalTensor(std::size_t height, std::size_t width, std::vector<double> values);
  static SignalTensor zeros(std::size_t height, std::size_t width);

  std::size_t size() const noexcept { return values.size(); }
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, eps ~ N(0, I) from `seed`.
SignalTensor forward_sample_closed(const SignalTensor& x0, std::size_t t,
                                   const NoiseSchedule& schedule, std::uint64_t seed);

/// Applies x_s = sqrt(1 - beta_s) x_{s-1} + sqrt(beta_s) eps_s for s = 1..t,
/// drawing fresh noise from one generator seeded with `seed`.
SignalTensor forward_sample_iterative(const SignalTensor& x0, std::size_t t,
                                      const NoiseSchedule& schedule, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Deterministic mock backends.
//
// A caption's "semantic fingerprint" is its mock text embedding f (unit, 512-d).
// Pixel p carries component p mod 512 with a fixed pseudo-random sign, scaled
// so x0 is roughly N(0, 1) per pixel. Noising follows the forward process at a
// step-derived level, and quantization maps x to 128 + 32x. Projecting a
// decoded image back onto the same pixel basis recovers f plus noise, so the
// matched-pair score falls as noise grows.

inline constexpr std::size_t kMockEmbeddingDim = 512;
inline constexpr std::size_t kMockScheduleSteps = 100;
inline constexpr double kMockBetaStart = 1e-4;
inline constexpr double kMockBetaEnd = 0.02;

const NoiseSchedule& mock_schedule();
/// clamp(1 - steps / 100, 0.05, 0.95).
double mock_noise_level(int steps);
/// Forward-process step for a noise level in [0, 1]; 0 means no noising.
std::size_t mock_timestep(double noise_level);

EmbeddingVector mock_embed_text(std::string_view text);
SignalTensor mock_base_signal(std::string_view prompt, std::size_t height, std::size_t width);

/// Renders `prompt` noised to forward step `timestep` (0 = clean) as a PNG.
Bytes mock_render(std::string_view prompt, std::uint64_t seed, std::size_t timestep, int width,
                  int height);
/// Throws InvalidArgument unless width, height >= 8.
Bytes mock_generate(std::string_view prompt, std::uint64_t seed, int steps, int width, int height);
/// Recovers the fingerprint from a PNG. Throws BackendError if undecodable.
/// Returns the raw projection when it is zero (callers reject zero vectors).
EmbeddingVector mock_embed_image(std::span<const std::uint8_t> png);

class MockImageGenBackend final : public ImageGenBackend {
 public:
  explicit MockImageGenBackend(std::chrono::milliseconds latency = std::chrono::milliseconds{0})
      : latency_(latency) {}

  std::string id() const override { return "mock-diffusion"; }
  GeneratedImage generate(const GenerationRequest& request) override;

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::chrono::milliseconds latency_;
  std::atomic<std::size_t> calls_{0};
};

class MockEmbeddingBackend final : public EmbeddingBackend {
 public:
  // Relative image locators resolve against `image_root`.
  explicit MockEmbeddingBackend(std::filesystem::path image_root = {})
      : image_root_(std::move(image_root)) {}

  std::string id() const override { return "mock-embedding-512"; }
  std::vector<EmbeddingVector> embed_text(std::span<const std::string> texts) override;
  std::vector<EmbeddingVector> embed_image(std::span<const std::string> locators) override;

 private:
  std::filesystem::path image_root_;
};

// Reads a whole file; throws BackendError if it cannot be read.
Bytes read_file_bytes(const std::filesystem::path& path);
std::filesystem::path resolve_locator(const std::filesystem::path& root, const std::string& locator);

}  // namespace synthcurate
