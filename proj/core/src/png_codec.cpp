#include "synthcurate/png_codec.hpp"

#include <png.h>

#include <cstring>
#include <string>

#include "synthcurate/errors.hpp"

namespace synthcurate {

std::vector<std::uint8_t> encode_png_gray8(const GrayImage& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height)) {
    throw InvalidArgument("encode_png_gray8: pixel buffer does not match dimensions");
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

GrayImage decode_png_gray8(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw BackendError("png decode: empty input");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw BackendError(std::string("png decode: ") + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.width = static_cast<int>(png.width);
  out.height = static_cast<int>(png.height);
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw BackendError("png decode: " + message);
  }
  return out;
}

}  // namespace synthcurate
