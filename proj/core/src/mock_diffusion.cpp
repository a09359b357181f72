#include "synthcurate/mock_diffusion.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <thread>

#include "synthcurate/errors.hpp"
#include "synthcurate/hashing.hpp"
#include "synthcurate/png_codec.hpp"
#include "synthcurate/rng.hpp"

namespace synthcurate {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, Validation validation)
    : betas_(std::move(betas)) {
  if (betas_.empty()) throw InvalidArgument("noise schedule needs at least one step");
  alpha_bars_.reserve(betas_.size());
  double running = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    const bool ok = validation == Validation::strict ? (b > 0.0 && b < 1.0) : (b >= 0.0 && b < 1.0);
    if (!ok || !std::isfinite(b)) {
      throw InvalidArgument(fmt::format("beta_{} = {} is out of range", i + 1, b));
    }
    running *= 1.0 - b;
    alpha_bars_.push_back(running);
  }
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw InvalidArgument("linear schedule needs at least one step");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas));
}

void NoiseSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > betas_.size()) {
    throw InvalidArgument(fmt::format("step {} outside [1, {}]", t, betas_.size()));
  }
}

double NoiseSchedule::beta(std::size_t t) const {
  check_step(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  check_step(t);
  return alpha_bars_[t - 1];
}

double alpha_bar(const NoiseSchedule& schedule, std::size_t t) { return schedule.alpha_bar(t); }

SignalTensor::SignalTensor(std::size_t h, std::size_t w, std::vector<double> v)
    : height(h), width(w), values(std::move(v)) {
  if (values.size() != height * width) {
    throw InvalidArgument(fmt::format("signal of {} values does not match shape {}x{}",
                                      values.size(), height, width));
  }
}

SignalTensor SignalTensor::zeros(std::size_t h, std::size_t w) {
  return SignalTensor(h, w, std::vector<double>(h * w, 0.0));
}

SignalTensor forward_sample_closed(const SignalTensor& x0, std::size_t t,
                                   const NoiseSchedule& schedule, std::uint64_t seed) {
  const double ab = schedule.alpha_bar(t);
  const double signal = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  Rng rng(seed);
  SignalTensor out = x0;
  for (auto& v : out.values) v = signal * v + noise * rng.normal();
  return out;
}

SignalTensor forward_sample_iterative(const SignalTensor& x0, std::size_t t,
                                      const NoiseSchedule& schedule, std::uint64_t seed) {
  schedule.alpha_bar(t);  // range check
  Rng rng(seed);
  SignalTensor x = x0;
  for (std::size_t s = 1; s <= t; ++s) {
    const double b = schedule.beta(s);
    const double keep = std::sqrt(1.0 - b);
    const double noise = std::sqrt(b);
    for (auto& v : x.values) v = keep * v + noise * rng.normal();
  }
  return x;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kPixelScale = 32.0;
constexpr double kPixelOffset = 128.0;
constexpr std::uint64_t kBasisKey = 0x5eedba5e0ff1ceULL;

double basis_sign(std::size_t pixel) {
  return (mix64(kBasisKey ^ static_cast<std::uint64_t>(pixel)) & 1U) ? 1.0 : -1.0;
}

std::uint64_t render_noise_seed(std::string_view prompt, std::uint64_t seed) {
  // Mixing the prompt in keeps two prompts rendered with the same seed from
  // sharing a noise field.
  return mix64(seed ^ hash64(prompt));
}

}  // namespace

const NoiseSchedule& mock_schedule() {
  static const NoiseSchedule schedule =
      NoiseSchedule::linear(kMockScheduleSteps, kMockBetaStart, kMockBetaEnd);
  return schedule;
}

double mock_noise_level(int steps) {
  return std::clamp(1.0 - static_cast<double>(steps) / 100.0, 0.05, 0.95);
}

std::size_t mock_timestep(double noise_level) {
  const double clamped = std::clamp(noise_level, 0.0, 1.0);
  return static_cast<std::size_t>(std::lround(clamped * static_cast<double>(kMockScheduleSteps)));
}

EmbeddingVector mock_embed_text(std::string_view text) {
  Rng rng(hash64(text));
  EmbeddingVector v;
  v.values.resize(kMockEmbeddingDim);
  for (auto& x : v.values) x = rng.normal();
  return v.normalized();
}

SignalTensor mock_base_signal(std::string_view prompt, std::size_t height, std::size_t width) {
  const auto fingerprint = mock_embed_text(prompt);
  const double scale = std::sqrt(static_cast<double>(kMockEmbeddingDim));
  SignalTensor x = SignalTensor::zeros(height, width);
  for (std::size_t p = 0; p < x.size(); ++p) {
    x.values[p] = scale * basis_sign(p) * fingerprint.values[p % kMockEmbeddingDim];
  }
  return x;
}

Bytes mock_render(std::string_view prompt, std::uint64_t seed, std::size_t timestep, int width,
                  int height) {
  if (width < 8 || height < 8) {
    throw InvalidArgument(fmt::format("mock image {}x{} is below the 8x8 minimum", width, height));
  }
  const auto h = static_cast<std::size_t>(height);
  const auto w = static_cast<std::size_t>(width);
  auto x = mock_base_signal(prompt, h, w);
  if (timestep > 0) x = forward_sample_closed(x, timestep, mock_schedule(), render_noise_seed(prompt, seed));

  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(x.size());
  for (std::size_t p = 0; p < x.size(); ++p) {
    const double q = std::round(kPixelOffset + kPixelScale * x.values[p]);
    img.pixels[p] = static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
  }
  return encode_png_gray8(img);
}

Bytes mock_generate(std::string_view prompt, std::uint64_t seed, int steps, int width, int height) {
  return mock_render(prompt, seed, mock_timestep(mock_noise_level(steps)), width, height);
}

EmbeddingVector mock_embed_image(std::span<const std::uint8_t> png) {
  const auto img = decode_png_gray8(png);
  std::vector<double> sum(kMockEmbeddingDim, 0.0);
  std::vector<std::size_t> count(kMockEmbeddingDim, 0);
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    const double x = (static_cast<double>(img.pixels[p]) - kPixelOffset) / kPixelScale;
    const auto k = p % kMockEmbeddingDim;
    sum[k] += basis_sign(p) * x;
    ++count[k];
  }
  EmbeddingVector v;
  v.values.resize(kMockEmbeddingDim);
  for (std::size_t k = 0; k < kMockEmbeddingDim; ++k) {
    v.values[k] = count[k] ? sum[k] / static_cast<double>(count[k]) : 0.0;
  }
  if (!v.valid()) return v;
  return v.normalized();
}

GeneratedImage MockImageGenBackend::generate(const GenerationRequest& request) {
  calls_.fetch_add(1);
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);
  try {
    return {mock_generate(request.prompt, request.seed, request.steps, request.width,
                          request.height),
            "png"};
  } catch (const InvalidArgument& e) {
    throw BackendError(e.what());
  }
}

Bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BackendError("cannot read image " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw BackendError("read error on " + path.string());
  return bytes;
}

std::filesystem::path resolve_locator(const std::filesystem::path& root, const std::string& locator) {
  std::filesystem::path p(locator);
  if (p.is_relative() && !root.empty()) p = root / p;
  return p;
}

std::vector<EmbeddingVector> MockEmbeddingBackend::embed_text(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(mock_embed_text(t));
  return out;
}

std::vector<EmbeddingVector> MockEmbeddingBackend::embed_image(std::span<const std::string> locators) {
  std::vector<EmbeddingVector> out;
  out.reserve(locators.size());
  for (const auto& loc : locators) {
    out.push_back(mock_embed_image(read_file_bytes(resolve_locator(image_root_, loc))));
  }
  return out;
}

}  // namespace synthcurate
