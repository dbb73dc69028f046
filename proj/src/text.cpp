#include "plan_harvest/text.hpp"

#include <cstdint>

namespace plan_harvest::text {

namespace {

bool is_unicode_space(std::uint32_t cp) {
    switch (cp) {
    case 0x0085: case 0x00A0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
        return true;
    default:
        return cp >= 0x2000 && cp <= 0x200A;
    }
}

} // namespace

std::size_t whitespace_at(std::string_view s, std::size_t pos) {
    if (pos >= s.size()) {
        return 0;
    }
    const auto b0 = static_cast<unsigned char>(s[pos]);
    if (b0 < 0x80) {
        return (b0 == ' ' || (b0 >= 0x09 && b0 <= 0x0D)) ? 1 : 0;
    }
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else {
        return 0;
    }
    if (pos + len > s.size()) {
        return 0;
    }
    for (std::size_t i = 1; i < len; ++i) {
        const auto b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xC0) != 0x80) {
            return 0;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    return is_unicode_space(cp) ? len : 0;
}

std::string_view trim(std::string_view s) {
    std::size_t begin = 0;
    while (begin < s.size()) {
        const auto w = whitespace_at(s, begin);
        if (w == 0) {
            break;
        }
        begin += w;
    }
    // Scan forward so multi-byte whitespace at the tail is found reliably.
    std::size_t end = begin;
    std::size_t pos = begin;
    while (pos < s.size()) {
        const auto w = whitespace_at(s, pos);
        if (w == 0) {
            ++pos;
            end = pos;
        } else {
            pos += w;
        }
    }
    return s.substr(begin, end - begin);
}

std::string normalize_phrase(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto w = whitespace_at(s, pos);
        if (w != 0) {
            pending_space = !out.empty();
            pos += w;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        char c = s[pos++];
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
        out.push_back(c);
    }
    return out;
}

std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> words;
    std::size_t pos = 0;
    std::size_t start = std::string_view::npos;
    while (pos < s.size()) {
        const auto w = whitespace_at(s, pos);
        if (w == 0) {
            if (start == std::string_view::npos) {
                start = pos;
            }
            ++pos;
            continue;
        }
        if (start != std::string_view::npos) {
            words.push_back(s.substr(start, pos - start));
            start = std::string_view::npos;
        }
        pos += w;
    }
    if (start != std::string_view::npos) {
        words.push_back(s.substr(start));
    }
    return words;
}

std::size_t codepoint_count(std::string_view s) {
    std::size_t n = 0;
    for (const char c : s) {
        if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) {
            ++n;
        }
    }
    return n;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i != 0) {
            out.append(sep);
        }
        out.append(parts[i]);
    }
    return out;
}

} // namespace plan_harvest::text
