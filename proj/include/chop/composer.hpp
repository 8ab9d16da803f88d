#pragma once

#include <chop/cnm.hpp>
#include <chop/corpus.hpp>

#include <string>

namespace chop {

/// Identifies the prefix rendering below; stored in index metadata.
inline constexpr std::string_view prefix_format_version = "pfx-v1";

struct ComposedChunk {
    std::string chunk_ref;
    std::string prefix;
    std::string x_text;
    CNM cnm;

    /// The original chunk text (everything after prefix and separator).
    std::string_view body() const noexcept {
        std::string_view x(x_text);
        return prefix.empty() ? x : x.substr(prefix.size() + 1);
    }
};

/// "[category: c] [nouns: n1; n2] [model: m]", null or empty fields omitted.
inline std::string render_prefix(const CNM& cnm) {
    std::string out;
    auto field = [&](std::string_view key, std::string_view value) {
        if (!out.empty())
            out += ' ';
        out += '[';
        out += key;
        out += ": ";
        out += value;
        out += ']';
    };
    if (cnm.category)
        field("category", *cnm.category);
    if (!cnm.nouns.empty()) {
        std::string joined;
        for (std::size_t i = 0; i < cnm.nouns.size(); ++i) {
            if (i)
                joined += "; ";
            joined += cnm.nouns[i];
        }
        field("nouns", joined);
    }
    if (cnm.model)
        field("model", *cnm.model);
    return out;
}

/// x = prefix + "\n" + chunk text, or the bare chunk text when the prefix is empty.
inline ComposedChunk compose(const CNM& cnm, const Chunk& chunk) {
    ComposedChunk c;
    c.chunk_ref = chunk.chunk_id;
    c.prefix = render_prefix(cnm);
    c.x_text = c.prefix.empty() ? chunk.text : c.prefix + "\n" + chunk.text;
    c.cnm = cnm;
    return c;
}

} // namespace chop
