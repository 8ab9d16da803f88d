#pragma once

#include <chop/error.hpp>
#include <chop/generated/prompt_resources.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

namespace chop {

/// A prompt template with `{name}` placeholders.
struct PromptTemplate {
    std::string name;    ///< e.g. "cnm_extract"
    std::string version; ///< e.g. "v1"
    std::string text;

    std::string id() const { return name + "/" + version; }

    /// Substitute placeholders in a single left-to-right pass. Braces that do
    /// not name a provided key are kept literally, and substituted values are
    /// never rescanned.
    std::string fill(const std::map<std::string, std::string, std::less<>>& values) const {
        std::string out;
        out.reserve(text.size() + 256);
        std::size_t i = 0;
        while (i < text.size()) {
            if (text[i] == '{') {
                auto close = text.find('}', i + 1);
                if (close != std::string::npos) {
                    auto key = std::string_view(text).substr(i + 1, close - i - 1);
                    if (auto it = values.find(key); it != values.end()) {
                        out += it->second;
                        i = close + 1;
                        continue;
                    }
                }
            }
            out.push_back(text[i++]);
        }
        return out;
    }

    static PromptTemplate from_file(const std::filesystem::path& path, std::string name, std::string version) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw DataError("cannot read prompt template: " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return {std::move(name), std::move(version), ss.str()};
    }
};

namespace prompts {

inline PromptTemplate cnm_extract() { return {"cnm_extract", "v1", std::string(resources::cnm_extract_v1)}; }
inline PromptTemplate continuity() { return {"continuity", "v1", std::string(resources::continuity_v1)}; }
inline PromptTemplate answer() { return {"answer", "v1", std::string(resources::answer_v1)}; }

} // namespace prompts
} // namespace chop
