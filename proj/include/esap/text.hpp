#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace esap {

/// A normalized token with its half-open byte span in the source text.
struct Token {
    std::string text;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool operator==(const Token&) const = default;
};

namespace text {

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct Decoded {
    char32_t cp;
    std::size_t len;
};

/// Decodes one UTF-8 sequence at `pos`. Malformed input yields U+FFFD, length 1.
inline Decoded decode_utf8(std::string_view s, std::size_t pos) noexcept {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    auto cont = [&](std::size_t i) -> int {
        if (pos + i >= s.size()) return -1;
        const auto b = static_cast<unsigned char>(s[pos + i]);
        return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
    };
    if (b0 < 0x80) return {b0, 1};
    if ((b0 & 0xE0) == 0xC0 && b0 >= 0xC2) {
        int c1 = cont(1);
        if (c1 >= 0) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
    } else if ((b0 & 0xF0) == 0xE0) {
        int c1 = cont(1), c2 = cont(2);
        if (c1 >= 0 && c2 >= 0) {
            char32_t cp = ((b0 & 0x0F) << 12) | (c1 << 6) | c2;
            if (cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF)) return {cp, 3};
        }
    } else if ((b0 & 0xF8) == 0xF0) {
        int c1 = cont(1), c2 = cont(2), c3 = cont(3);
        if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
            char32_t cp = ((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3;
            if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
        }
    }
    return {0xFFFD, 1};
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

namespace detail {

struct Range {
    char32_t lo, hi;
};

// Non-ASCII punctuation, separators and symbols. Everything else above 0x7F
// that decodes cleanly counts as part of a word.
inline constexpr Range kSeparatorRanges[] = {
    {0x0080, 0x00A9}, {0x00AB, 0x00B1}, {0x00B4, 0x00B4}, {0x00B6, 0x00B8},
    {0x00BB, 0x00BB}, {0x00BF, 0x00BF}, {0x00D7, 0x00D7}, {0x00F7, 0x00F7},
    {0x037E, 0x037E}, {0x0387, 0x0387}, {0x055A, 0x055F}, {0x0589, 0x058A},
    {0x05BE, 0x05BE}, {0x05C0, 0x05C0}, {0x05C3, 0x05C3}, {0x05C6, 0x05C6},
    {0x05F3, 0x05F4}, {0x060C, 0x060D}, {0x061B, 0x061F}, {0x066A, 0x066D},
    {0x06D4, 0x06D4}, {0x0964, 0x0965}, {0x0970, 0x0970}, {0x0E4F, 0x0E4F},
    {0x0E5A, 0x0E5B}, {0x10FB, 0x10FB}, {0x1360, 0x1368}, {0x1680, 0x1680},
    {0x166D, 0x166E}, {0x16EB, 0x16ED}, {0x17D4, 0x17DA}, {0x1800, 0x180A},
    {0x2000, 0x206F}, {0x20A0, 0x20CF}, {0x2190, 0x2BFF}, {0x2E00, 0x2E7F},
    {0x3000, 0x3004}, {0x3008, 0x3020}, {0x3030, 0x3030}, {0x303D, 0x303D},
    {0xFD3E, 0xFD3F}, {0xFE10, 0xFE19}, {0xFE30, 0xFE6F}, {0xFEFF, 0xFEFF},
    {0xFF01, 0xFF0F}, {0xFF1A, 0xFF20}, {0xFF3B, 0xFF40}, {0xFF5B, 0xFF65},
    {0xFFF0, 0xFFFF}, {0x1F000, 0x1FAFF},
};

} // namespace detail

/// Letter or digit under the tokenizer's definition.
inline bool is_word_char(char32_t cp) noexcept {
    if (cp < 0x80) {
        return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
    }
    for (const auto& r : detail::kSeparatorRanges) {
        if (cp >= r.lo && cp <= r.hi) return false;
    }
    return true;
}

/// Simple lowercase mapping for ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic.
inline char32_t to_lower(char32_t cp) noexcept {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp < 0xC0) return cp;
    if (cp <= 0xDE && cp != 0xD7) return cp + 32;
    if (cp >= 0x100 && cp <= 0x137) return cp | 1;
    if (cp >= 0x139 && cp <= 0x148) return (cp & 1) ? cp + 1 : cp;
    if (cp >= 0x14A && cp <= 0x177) return cp | 1;
    if (cp == 0x178) return 0xFF;
    if (cp >= 0x179 && cp <= 0x17E) return (cp & 1) ? cp + 1 : cp;
    if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 32;
    if (cp >= 0x410 && cp <= 0x42F) return cp + 32;
    if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
    return cp;
}

} // namespace text

/// Splits `input` into maximal runs of letters/digits, lowercased.
/// Deterministic and locale-independent; spans are byte offsets into `input`.
inline std::vector<Token> tokenize(std::string_view input) {
    std::vector<Token> out;
    std::size_t pos = 0;
    Token cur;
    bool in_word = false;
    while (pos < input.size()) {
        const auto d = text::decode_utf8(input, pos);
        if (text::is_word_char(d.cp) && d.cp != 0xFFFD) {
            if (!in_word) {
                cur = Token{{}, pos, pos};
                in_word = true;
            }
            text::append_utf8(cur.text, text::to_lower(d.cp));
            cur.end = pos + d.len;
        } else if (in_word) {
            out.push_back(std::move(cur));
            in_word = false;
        }
        pos += d.len;
    }
    if (in_word) out.push_back(std::move(cur));
    return out;
}

/// Token texts only.
inline std::vector<std::string> token_texts(std::string_view input) {
    std::vector<std::string> out;
    for (auto& t : tokenize(input)) out.push_back(std::move(t.text));
    return out;
}

namespace text {

/// Lowercases and collapses whitespace runs to one space, trimming both ends.
/// `offsets[i]` is the source byte offset of output byte i; one extra entry marks the end.
inline std::string normalize_for_match(std::string_view s, std::vector<std::size_t>* offsets = nullptr) {
    std::string out;
    if (offsets) offsets->clear();
    bool pending_space = false;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto d = decode_utf8(s, pos);
        const bool space = d.cp == ' ' || d.cp == '\t' || d.cp == '\n' || d.cp == '\r' ||
                           d.cp == '\f' || d.cp == '\v' || d.cp == 0xA0;
        if (space) {
            pending_space = !out.empty();
        } else {
            if (pending_space) {
                out.push_back(' ');
                if (offsets) offsets->push_back(pos);
                pending_space = false;
            }
            const std::size_t before = out.size();
            append_utf8(out, to_lower(d.cp));
            if (offsets) {
                for (std::size_t i = before; i < out.size(); ++i) offsets->push_back(pos);
            }
        }
        pos += d.len;
    }
    if (offsets) offsets->push_back(s.size());
    return out;
}

/// Sentence split on '.', '!' or '?' followed by whitespace or end of text.
/// Returned sentences are trimmed and keep their terminal punctuation.
inline std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    auto is_space = [](char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; };
    auto push = [&](std::size_t b, std::size_t e) {
        while (b < e && is_space(s[b])) ++b;
        while (e > b && is_space(s[e - 1])) --e;
        if (e > b) out.emplace_back(s.substr(b, e - b));
    };
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || is_space(s[i + 1]))) {
            push(start, i + 1);
            start = i + 1;
        } else if (c == '\n' && i + 1 < s.size() && s[i + 1] == '\n') {
            push(start, i);
            start = i + 1;
        }
    }
    push(start, s.size());
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && static_cast<unsigned char>(s[b]) <= ' ') ++b;
    while (e > b && static_cast<unsigned char>(s[e - 1]) <= ' ') --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
    }
    return out;
}

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == '\n') {
            if (i == s.size() && start == s.size()) break;
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string to_hex(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

} // namespace text
} // namespace esap
