#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace synthcurate {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::string_view data);
Sha256Digest sha256(std::span<const std::uint8_t> data);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view data);

/// First eight digest bytes read little-endian. Used wherever a 64-bit key
/// must be derived from arbitrary text (RNG seeds, fingerprints).
std::uint64_t hash64(std::string_view data);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::string base64_encode(std::string_view bytes);
/// Throws InvalidArgument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Incremental SHA-256 for hashing several files / strings together.
class Sha256Stream {
 public:
  Sha256Stream();
  ~Sha256Stream();
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  Sha256Stream& update(std::string_view data);
  Sha256Stream& update(std::span<const std::uint8_t> data);
  // Length-prefixed update so that ("ab","c") and ("a","bc") differ.
  Sha256Stream& update_field(std::string_view data);
  std::string hex_digest();

 private:
  void* ctx_;
};

}  // namespace synthcurate
