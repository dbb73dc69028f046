#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace plan_harvest::text {

// Byte length of the whitespace code point starting at `pos`, or 0 when the
// code point there is not whitespace. Recognizes ASCII whitespace plus the
// UTF-8 encoded Unicode White_Space characters.
std::size_t whitespace_at(std::string_view s, std::size_t pos);

inline bool is_space_at(std::string_view s, std::size_t pos) {
    return whitespace_at(s, pos) != 0;
}

std::string_view trim(std::string_view s);

// Trim, collapse inner whitespace runs to one ASCII space, lowercase ASCII.
std::string normalize_phrase(std::string_view s);

// Whitespace-delimited tokens (Unicode whitespace, no punctuation stripping).
std::vector<std::string_view> split_words(std::string_view s);

// Number of UTF-8 code points; malformed bytes count one each.
std::size_t codepoint_count(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

} // namespace plan_harvest::text
