#pragma once

#include <string>
#include <string_view>

namespace ota {

/// Unicode NFC normalization of UTF-8 text. Invalid UTF-8 is returned as is.
std::string nfc(std::string_view utf8);

/// NFC, trim, and collapse internal whitespace runs to a single space.
/// Case is preserved.
std::string normalize_text(std::string_view utf8);

std::string trim(std::string_view s);

/// Exact byte-substring test after NFC on both sides.
bool contains_verbatim(std::string_view haystack, std::string_view needle);

}  // namespace ota
