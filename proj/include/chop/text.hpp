#pragma once

// Byte-oriented text helpers. All offsets in this library are byte offsets
// into UTF-8 text; "character" caps count code points.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace chop {

/// Half-open interval [begin, end).
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end > begin ? end - begin : 0; }
    bool empty() const noexcept { return end <= begin; }
    friend bool operator==(const Span&, const Span&) = default;
};

inline std::size_t overlap(Span a, Span b) noexcept {
    auto lo = std::max(a.begin, b.begin);
    auto hi = std::min(a.end, b.end);
    return hi > lo ? hi - lo : 0;
}

namespace text {

inline bool is_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Word bytes: ASCII alphanumerics and any byte of a multi-byte UTF-8 sequence.
inline bool is_word_byte(char c) noexcept {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u) != 0;
}

inline std::string_view trim(std::string_view s) noexcept {
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

/// Collapse whitespace runs to one space and trim the ends.
inline std::string normalize_space(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending)
            out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

/// Byte length of the longest prefix of `s` holding at most `max_chars` code points.
inline std::size_t utf8_prefix_bytes(std::string_view s, std::size_t max_chars) noexcept {
    std::size_t chars = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto u = static_cast<unsigned char>(s[i]);
        if ((u & 0xC0) != 0x80) {
            if (chars == max_chars)
                return i;
            ++chars;
        }
    }
    return s.size();
}

inline std::string_view utf8_head(std::string_view s, std::size_t max_chars) noexcept {
    return s.substr(0, utf8_prefix_bytes(s, max_chars));
}

/// Last `max_chars` code points of `s`.
inline std::string_view utf8_tail(std::string_view s, std::size_t max_chars) noexcept {
    std::size_t chars = 0;
    std::size_t i = s.size();
    while (i > 0 && chars < max_chars) {
        --i;
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80)
            ++chars;
    }
    return s.substr(i);
}

inline std::size_t utf8_length(std::string_view s) noexcept {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
        return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
    }));
}

/// Replace every occurrence of `from` with `to`.
inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    if (from.empty())
        return s;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

/// CRLF and lone CR become LF.
inline std::string normalize_newlines(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\r') {
            out.push_back('\n');
            if (i + 1 < s.size() && s[i + 1] == '\n')
                ++i;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

} // namespace text

/// Splits text into tokens carrying byte spans.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<Span> tokenize(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

/// Default tokenizer: maximal runs of word bytes form one token, every other
/// non-space byte is a token of its own.
class SimpleTokenizer final : public Tokenizer {
public:
    std::vector<Span> tokenize(std::string_view s) const override {
        std::vector<Span> out;
        std::size_t i = 0;
        while (i < s.size()) {
            if (text::is_space(s[i])) {
                ++i;
            } else if (text::is_word_byte(s[i])) {
                auto start = i;
                while (i < s.size() && text::is_word_byte(s[i]))
                    ++i;
                out.push_back({start, i});
            } else {
                out.push_back({i, i + 1});
                ++i;
            }
        }
        return out;
    }

    std::string name() const override { return "simple-v1"; }
};

inline std::shared_ptr<const Tokenizer> default_tokenizer() {
    static const auto instance = std::make_shared<const SimpleTokenizer>();
    return instance;
}

/// Lowercased word tokens only (punctuation dropped). Shared by the hash embedder.
inline std::vector<std::string> word_terms(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (!text::is_word_byte(s[i])) {
            ++i;
            continue;
        }
        auto start = i;
        while (i < s.size() && text::is_word_byte(s[i]))
            ++i;
        out.push_back(text::to_lower(s.substr(start, i - start)));
    }
    return out;
}

} // namespace chop
