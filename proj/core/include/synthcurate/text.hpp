#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace synthcurate {

// Trim, collapse internal whitespace runs to one ASCII space, and apply
// Unicode NFC. Invalid UTF-8 sequences are replaced with U+FFFD.
std::string normalize_text(std::string_view raw);

// Lower-cases ASCII letters only; enough for token matching against configs.
std::string ascii_lower(std::string_view s);

// Splits on single spaces; expects normalized input.
std::vector<std::string_view> split_tokens(std::string_view normalized);

}  // namespace synthcurate
