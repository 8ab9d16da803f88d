#pragma once

#include <chop/corpus.hpp>
#include <chop/error.hpp>
#include <chop/llm_gateway.hpp>
#include <chop/prompts.hpp>
#include <chop/text.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <optional>
#include <string>
#include <vector>

namespace chop {

/// Category / Nouns / Model signature of a chunk.
///
/// Invariants: 1 or 2 nouns; with a category, the first noun reads
/// "<category> <specific noun>"; confidence in [0, 1].
struct CNM {
    std::optional<std::string> category;
    std::vector<std::string> nouns;
    std::optional<std::string> model;
    double confidence = 0.0;

    friend bool operator==(const CNM&, const CNM&) = default;
};

inline void to_json(nlohmann::json& j, const CNM& c) {
    j = nlohmann::json{{"category", c.category ? nlohmann::json(*c.category) : nlohmann::json(nullptr)},
                       {"nouns", c.nouns},
                       {"model", c.model ? nlohmann::json(*c.model) : nlohmann::json(nullptr)},
                       {"confidence", c.confidence}};
}

inline void from_json(const nlohmann::json& j, CNM& c) {
    auto opt = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key) || j.at(key).is_null())
            return std::nullopt;
        return j.at(key).get<std::string>();
    };
    c.category = opt("category");
    c.model = opt("model");
    c.nouns = j.at("nouns").get<std::vector<std::string>>();
    c.confidence = j.value("confidence", 0.0);
}

class CnmParseError : public DataError {
public:
    using DataError::DataError;
};

/// How a first noun lacking the "<category> " prefix is treated.
enum class CompoundRule { repair, reject };

inline std::string build_cnm_prompt(std::string_view chunk_text,
                                    const PromptTemplate& tmpl = prompts::cnm_extract()) {
    return tmpl.fill({{"text", std::string(text::utf8_head(chunk_text, 1000))}});
}

namespace detail {

/// The outermost {...} of a reply, dropping chatter and code fences around it.
inline std::string_view json_object_slice(std::string_view raw) {
    auto open = raw.find('{');
    auto close = raw.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        return {};
    return raw.substr(open, close - open + 1);
}

inline std::optional<std::string> label_field(const nlohmann::json& obj, const char* key, bool lowercase) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null())
        return std::nullopt;
    if (!it->is_string())
        throw CnmParseError(std::string("field '") + key + "' must be a string or null");
    auto v = text::normalize_space(it->get<std::string>());
    if (lowercase)
        v = text::to_lower(v);
    if (v.empty() || text::to_lower(v) == "null" || text::to_lower(v) == "none")
        return std::nullopt;
    return v;
}

} // namespace detail

/// Parse a model reply into a validated CNM.
///
/// Category and nouns are lowercased; the model label keeps its case since
/// series names such as "225B" are case-significant. All labels are
/// whitespace-normalized.
inline CNM parse_cnm_response(std::string_view raw, CompoundRule rule = CompoundRule::repair) {
    auto slice = detail::json_object_slice(raw);
    if (slice.empty())
        throw CnmParseError("reply contains no JSON object");

    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(slice);
    } catch (const nlohmann::json::parse_error& e) {
        throw CnmParseError(std::string("reply is not valid JSON: ") + e.what());
    }
    if (!obj.is_object())
        throw CnmParseError("reply is not a JSON object");

    CNM cnm;
    cnm.category = detail::label_field(obj, "category", true);
    cnm.model = detail::label_field(obj, "model", false);

    if (auto it = obj.find("nouns"); it != obj.end() && !it->is_null()) {
        auto take = [&](const nlohmann::json& n) {
            if (n.is_null())
                return;
            if (!n.is_string())
                throw CnmParseError("nouns must be strings");
            auto v = text::to_lower(text::normalize_space(n.get<std::string>()));
            if (!v.empty())
                cnm.nouns.push_back(std::move(v));
        };
        if (it->is_array()) {
            for (const auto& n : *it)
                take(n);
        } else {
            take(*it);
        }
    }
    if (cnm.nouns.empty())
        throw CnmParseError("nouns must hold 1 or 2 entries, got none");
    if (cnm.nouns.size() > 2)
        throw CnmParseError("nouns must hold 1 or 2 entries, got " + std::to_string(cnm.nouns.size()));

    if (auto it = obj.find("confidence"); it != obj.end() && !it->is_null()) {
        if (!it->is_number())
            throw CnmParseError("confidence must be a number");
        cnm.confidence = it->get<double>();
        if (!(cnm.confidence >= 0.0 && cnm.confidence <= 1.0))
            throw CnmParseError("confidence " + it->dump() + " outside [0, 1]");
    }

    if (cnm.category && !cnm.nouns.front().starts_with(*cnm.category + " ")) {
        if (rule == CompoundRule::reject)
            throw CnmParseError("first noun '" + cnm.nouns.front() + "' does not start with category '" +
                                *cnm.category + "'");
        cnm.nouns.front() = *cnm.category + " " + cnm.nouns.front();
    }
    return cnm;
}

/// Fallback when extraction fails twice: nulls, the first word of the chunk as
/// the sole noun, zero confidence.
inline CNM null_cnm(std::string_view chunk_text) {
    auto words = word_terms(chunk_text);
    return {std::nullopt, {words.empty() ? std::string("unknown") : words.front()}, std::nullopt, 0.0};
}

struct CnmExtraction {
    CNM cnm;
    int calls = 0;         ///< gateway calls issued (1 or 2)
    bool fallback = false; ///< true when null_cnm was returned
};

/// Prompt, parse, and on failure re-prompt once with the parse error before
/// falling back to null_cnm.
inline CnmExtraction extract_cnm(const Chunk& chunk, ChatGateway& gateway,
                                 const PromptTemplate& tmpl = prompts::cnm_extract()) {
    auto prompt = build_cnm_prompt(chunk.text, tmpl);
    CnmExtraction out;

    std::string first_error;
    try {
        ++out.calls;
        out.cnm = parse_cnm_response(gateway.ask(prompt).text);
        return out;
    } catch (const CnmParseError& e) {
        first_error = e.what();
    }

    auto corrective = prompt + "\n\nYour previous reply could not be used: " + first_error +
                      ". Reply again with the JSON object only.";
    try {
        ++out.calls;
        out.cnm = parse_cnm_response(gateway.ask(corrective).text);
        return out;
    } catch (const CnmParseError& e) {
        spdlog::warn("cnm: extraction failed twice for chunk {} ({}); using null CNM", chunk.chunk_id, e.what());
    }
    out.cnm = null_cnm(chunk.text);
    out.fallback = true;
    return out;
}

} // namespace chop
