#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace synthcurate {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, width * height
};

// 8-bit grayscale PNG via libpng. Encoding is deterministic.
std::vector<std::uint8_t> encode_png_gray8(const GrayImage& image);
// Decodes any PNG libpng understands and converts it to 8-bit grayscale.
// Throws BackendError when the bytes are not a decodable PNG.
GrayImage decode_png_gray8(std::span<const std::uint8_t> bytes);

}  // namespace synthcurate
