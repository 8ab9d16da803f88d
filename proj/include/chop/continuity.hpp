#pragma once

#include <chop/cnm.hpp>
#include <chop/corpus.hpp>
#include <chop/digest.hpp>
#include <chop/llm_gateway.hpp>
#include <chop/prompts.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace chop {

struct Anchor {
    std::string text;
    std::string source_chunk_id;
};

struct ContinuityDecision {
    bool same = true;
    std::string raw_response;
    std::pair<std::string, std::string> pair; ///< (previous chunk_id, current chunk_id)
    int calls = 0;          ///< gateway calls issued (1 or 2)
    bool defaulted = false; ///< reply unparseable twice; `same` is the conservative default
};

enum class CnmOrigin { extracted, inherited };

inline const char* to_string(CnmOrigin o) noexcept { return o == CnmOrigin::extracted ? "EXTRACTED" : "INHERITED"; }

struct AnnotatedChunk {
    Chunk chunk;
    CNM cnm;
    CnmOrigin origin = CnmOrigin::extracted;
    std::optional<ContinuityDecision> decision; ///< absent for the first chunk
};

inline constexpr std::size_t default_anchor_cap = 600;

/// Tail of the previous chunk, at most `cap` characters.
inline Anchor make_anchor(const Chunk& prev, std::size_t cap = default_anchor_cap) {
    return {std::string(text::utf8_tail(prev.text, cap)), prev.chunk_id};
}

/// Fill the decision prompt. The anchor keeps its last `cap` characters and
/// the current text its first `cap` characters.
inline std::string build_cd_prompt(const Anchor& anchor, std::string_view current, std::size_t cap = default_anchor_cap,
                                   const PromptTemplate& tmpl = prompts::continuity()) {
    return tmpl.fill({{"anchor", std::string(text::utf8_tail(anchor.text, cap))},
                      {"current", std::string(text::utf8_head(current, cap))}});
}

/// Accepts {"same": true|false} (possibly wrapped in prose or fences) or a bare
/// true/false. Anything else is unparseable.
inline std::optional<bool> parse_cd_response(std::string_view raw) {
    auto trimmed = text::trim(raw);
    auto lowered = text::to_lower(trimmed);
    if (lowered == "true")
        return true;
    if (lowered == "false")
        return false;

    auto slice = detail::json_object_slice(trimmed);
    if (slice.empty())
        return std::nullopt;
    auto obj = nlohmann::json::parse(slice, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
        return std::nullopt;
    auto it = obj.find("same");
    if (it == obj.end())
        return std::nullopt;
    if (it->is_boolean())
        return it->get<bool>();
    if (it->is_string()) {
        auto s = text::to_lower(text::trim(it->get<std::string>()));
        if (s == "true")
            return true;
        if (s == "false")
            return false;
    }
    return std::nullopt;
}

struct ChainOptions {
    std::size_t anchor_cap = default_anchor_cap;
    PromptTemplate cnm_prompt = prompts::cnm_extract();
    PromptTemplate cd_prompt = prompts::continuity();
};

/// Ask whether `cur` continues `prev`. One corrective re-prompt on an
/// unparseable reply, then TRUE (keep the texts together).
inline ContinuityDecision decide_continuity(const Chunk& prev, const Chunk& cur, ChatGateway& gateway,
                                            const ChainOptions& options = {}) {
    if (prev.doc_id != cur.doc_id || prev.seq_index + 1 != cur.seq_index)
        throw DataError("decide_continuity: " + prev.chunk_id + " and " + cur.chunk_id + " are not adjacent");

    ContinuityDecision d;
    d.pair = {prev.chunk_id, cur.chunk_id};
    auto prompt = build_cd_prompt(make_anchor(prev, options.anchor_cap), cur.text, options.anchor_cap,
                                  options.cd_prompt);

    ++d.calls;
    d.raw_response = gateway.ask(prompt).text;
    if (auto v = parse_cd_response(d.raw_response)) {
        d.same = *v;
        return d;
    }

    auto corrective = prompt + "\n\nYour previous reply could not be read. Reply with {\"same\": true} or "
                               "{\"same\": false} only.";
    ++d.calls;
    d.raw_response = gateway.ask(corrective).text;
    if (auto v = parse_cd_response(d.raw_response)) {
        d.same = *v;
        return d;
    }
    spdlog::warn("continuity: unreadable decision for {} -> {}; keeping texts together", prev.chunk_id,
                 cur.chunk_id);
    d.same = true;
    d.defaulted = true;
    return d;
}

using CnmExtractorFn = std::function<CNM(const Chunk&)>;
using DeciderFn = std::function<ContinuityDecision(const Chunk& prev, const Chunk& cur)>;

/// Inherit on TRUE (no extractor call), re-extract on FALSE.
inline std::pair<CNM, CnmOrigin> propagate_cnm(const CNM& prev_cnm, const ContinuityDecision& decision,
                                               const Chunk& cur, const CnmExtractorFn& extractor) {
    if (decision.same)
        return {prev_cnm, CnmOrigin::inherited};
    return {extractor(cur), CnmOrigin::extracted};
}

struct ChainStats {
    long extractions = 0;
    long decisions = 0;
    long false_decisions = 0;
};

/// Walk the chunks of one document in order. Chunk 0 is always extracted;
/// every later chunk is decided against its predecessor before its CNM is
/// fixed. `on_chunk`, if set, sees each chunk as soon as it is final.
inline std::vector<AnnotatedChunk> run_chain(const std::vector<Chunk>& chunks, const DeciderFn& decide,
                                             const CnmExtractorFn& extract, ChainStats* stats = nullptr,
                                             const std::function<void(const AnnotatedChunk&)>& on_chunk = {}) {
    std::vector<AnnotatedChunk> out;
    out.reserve(chunks.size());
    ChainStats local;
    auto counting_extract = [&](const Chunk& c) {
        ++local.extractions;
        return extract(c);
    };

    for (std::size_t i = 0; i < chunks.size(); ++i) {
        AnnotatedChunk a;
        a.chunk = chunks[i];
        if (i == 0) {
            a.cnm = counting_extract(chunks[0]);
            a.origin = CnmOrigin::extracted;
        } else {
            auto d = decide(chunks[i - 1], chunks[i]);
            ++local.decisions;
            if (!d.same)
                ++local.false_decisions;
            std::tie(a.cnm, a.origin) = propagate_cnm(out.back().cnm, d, chunks[i], counting_extract);
            a.decision = std::move(d);
        }
        out.push_back(std::move(a));
        if (on_chunk)
            on_chunk(out.back());
    }
    if (stats) {
        stats->extractions += local.extractions;
        stats->decisions += local.decisions;
        stats->false_decisions += local.false_decisions;
    }
    return out;
}

/// Gateway-backed chain: LLM decisions and LLM extraction.
inline std::vector<AnnotatedChunk> run_chain(const std::vector<Chunk>& chunks, ChatGateway& gateway,
                                             const ChainOptions& options = {}, ChainStats* stats = nullptr,
                                             const std::function<void(const AnnotatedChunk&)>& on_chunk = {}) {
    return run_chain(
        chunks, [&](const Chunk& p, const Chunk& c) { return decide_continuity(p, c, gateway, options); },
        [&](const Chunk& c) { return extract_cnm(c, gateway, options.cnm_prompt).cnm; }, stats, on_chunk);
}

/// One JSON line per chunk: {pair, value, raw_response_digest, cnm_origin}.
/// The first chunk of a document has a null predecessor and value.
inline void write_audit_log(std::ostream& out, const std::vector<AnnotatedChunk>& chain) {
    for (const auto& a : chain) {
        nlohmann::json rec;
        if (a.decision) {
            rec["pair"] = {a.decision->pair.first, a.decision->pair.second};
            rec["value"] = a.decision->same;
            rec["raw_response_digest"] = sha256_hex(a.decision->raw_response);
        } else {
            rec["pair"] = {nullptr, a.chunk.chunk_id};
            rec["value"] = nullptr;
            rec["raw_response_digest"] = nullptr;
        }
        rec["cnm_origin"] = to_string(a.origin);
        out << rec.dump() << '\n';
    }
}

} // namespace chop
