#pragma once

#include <chop/digest.hpp>
#include <chop/embedding.hpp>
#include <chop/error.hpp>
#include <chop/text.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace chop {

/// A region of a stitched document that came from one source record.
struct SourceSegment {
    std::string doc_id;          ///< id of the original record
    Span span;                   ///< position inside the stitched text
    std::size_t source_offset{}; ///< where `span.begin` sits in the original record
};

/// A region expressed in the coordinates of an original corpus record.
struct SourceRef {
    std::string doc_id;
    Span span;
    friend bool operator==(const SourceRef&, const SourceRef&) = default;
};

struct Document {
    std::string doc_id;
    std::string text;
    std::optional<std::string> source_path;
    /// Provenance of the text. Empty means the whole text is this record's own.
    std::vector<SourceSegment> segments;

    /// Map a span of this document back onto the original records it covers.
    std::vector<SourceRef> resolve(Span span) const {
        if (segments.empty()) {
            Span clipped{std::min(span.begin, text.size()), std::min(span.end, text.size())};
            if (clipped.empty())
                return {};
            return {{doc_id, clipped}};
        }
        std::vector<SourceRef> out;
        for (const auto& seg : segments) {
            auto lo = std::max(span.begin, seg.span.begin);
            auto hi = std::min(span.end, seg.span.end);
            if (hi <= lo)
                continue;
            auto shift = seg.source_offset;
            out.push_back({seg.doc_id, {lo - seg.span.begin + shift, hi - seg.span.begin + shift}});
        }
        return out;
    }
};

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::size_t seq_index = 0;
    std::string text;
    Span token_span;
    Span char_span;
};

struct Sentence {
    std::string text;
    Span char_span;
};

// ---------------------------------------------------------------------------
// Loading and stitching

/// Read a line-delimited JSON corpus. Blank lines are skipped.
inline std::vector<Document> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("corpus file not found: " + path.string());

    std::vector<Document> docs;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty())
            continue;
        auto where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(where + ": malformed record: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("doc_id") || !rec["doc_id"].is_string() ||
            !rec.contains("text") || !rec["text"].is_string())
            throw DataError(where + ": record needs string fields doc_id and text");

        Document d;
        d.doc_id = rec["doc_id"].get<std::string>();
        d.text = rec["text"].get<std::string>();
        if (d.text.empty())
            throw DataError(where + ": empty text for doc_id '" + d.doc_id + "'");
        if (auto it = rec.find("source_path"); it != rec.end() && !it->is_null()) {
            if (!it->is_string())
                throw DataError(where + ": source_path must be a string");
            d.source_path = it->get<std::string>();
        }
        if (!seen.insert(d.doc_id).second)
            throw DataError(where + ": duplicate doc_id '" + d.doc_id + "'");
        docs.push_back(std::move(d));
    }
    return docs;
}

/// Concatenate documents with `joiner` between them and nothing else.
///
/// A single input keeps its id; several inputs get an id derived from the
/// ordered input ids. Provenance segments allow spans in the result to be
/// mapped back to the originals.
inline Document stitch_documents(const std::vector<Document>& docs, std::string_view joiner = "\n") {
    if (docs.empty())
        throw DataError("stitch_documents: no documents to stitch");
    if (docs.size() == 1)
        return docs.front();

    Document out;
    Sha256 h;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto& d = docs[i];
        h.update(d.doc_id).update("\x1f", 1);
        if (i > 0)
            out.text += joiner;
        auto base = out.text.size();
        if (d.segments.empty()) {
            out.segments.push_back({d.doc_id, {base, base + d.text.size()}, 0});
        } else {
            for (auto seg : d.segments) {
                seg.span.begin += base;
                seg.span.end += base;
                out.segments.push_back(std::move(seg));
            }
        }
        out.text += d.text;
    }
    out.doc_id = "stitched-" + to_hex(h.finish()).substr(0, 16);

    auto same_source = std::all_of(docs.begin(), docs.end(),
                                   [&](const Document& d) { return d.source_path == docs.front().source_path; });
    if (same_source)
        out.source_path = docs.front().source_path;
    return out;
}

/// Group records into the files they are stitched into: records sharing a
/// source_path form one file (in first-appearance order); records without a
/// source_path stand alone.
inline std::vector<std::vector<Document>> group_by_source(const std::vector<Document>& docs) {
    std::vector<std::vector<Document>> groups;
    std::map<std::string, std::size_t> index;
    for (const auto& d : docs) {
        if (!d.source_path) {
            groups.push_back({d});
            continue;
        }
        auto [it, fresh] = index.emplace(*d.source_path, groups.size());
        if (fresh)
            groups.emplace_back();
        groups[it->second].push_back(d);
    }
    return groups;
}

inline std::vector<Document> stitch_corpus(const std::vector<Document>& docs, std::string_view joiner = "\n") {
    std::vector<Document> out;
    for (const auto& g : group_by_source(docs))
        out.push_back(stitch_documents(g, joiner));
    return out;
}

// ---------------------------------------------------------------------------
// Chunking

inline std::string make_chunk_id(const std::string& doc_id, std::size_t seq) {
    return doc_id + "#" + std::to_string(seq);
}

/// Token windows [i*stride, i*stride + size) clipped to N, stride = size - overlap.
/// A trailing window contained in its predecessor is dropped.
inline std::vector<Span> fixed_windows(std::size_t n_tokens, std::size_t size, std::size_t overlap) {
    if (size < 1)
        throw UsageError("chunk size must be at least 1");
    if (overlap >= size)
        throw UsageError("chunk overlap must be smaller than chunk size");
    std::vector<Span> out;
    auto stride = size - overlap;
    for (std::size_t start = 0; start < n_tokens; start += stride) {
        Span w{start, std::min(start + size, n_tokens)};
        if (!out.empty() && w.end <= out.back().end)
            break;
        out.push_back(w);
    }
    return out;
}

inline std::vector<Chunk> chunk_fixed(const Document& doc, std::size_t size, std::size_t overlap,
                                      const Tokenizer& tokenizer = *default_tokenizer()) {
    auto tokens = tokenizer.tokenize(doc.text);
    if (tokens.empty())
        throw DataError("chunk_fixed: document '" + doc.doc_id + "' has no tokens");

    std::vector<Chunk> out;
    for (auto w : fixed_windows(tokens.size(), size, overlap)) {
        Chunk c;
        c.doc_id = doc.doc_id;
        c.seq_index = out.size();
        c.chunk_id = make_chunk_id(doc.doc_id, c.seq_index);
        c.token_span = w;
        c.char_span = {tokens[w.begin].begin, tokens[w.end - 1].end};
        c.text = doc.text.substr(c.char_span.begin, c.char_span.length());
        out.push_back(std::move(c));
    }
    return out;
}

/// Split after '.', '!' or '?' when followed by whitespace (or the end), and at
/// blank lines. Pieces are trimmed; empty pieces are dropped.
inline std::vector<Sentence> split_sentences(const Document& doc) {
    const std::string& s = doc.text;
    std::vector<Sentence> out;
    auto emit = [&](std::size_t from, std::size_t to) {
        while (from < to && text::is_space(s[from]))
            ++from;
        while (to > from && text::is_space(s[to - 1]))
            --to;
        if (to > from)
            out.push_back({s.substr(from, to - from), {from, to}});
    };

    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || text::is_space(s[i + 1]))) {
            emit(start, i + 1);
            start = i + 1;
        } else if (c == '\n') {
            // blank line: newline, optional horizontal space, newline
            auto j = i + 1;
            while (j < s.size() && (s[j] == ' ' || s[j] == '\t' || s[j] == '\r'))
                ++j;
            if (j < s.size() && s[j] == '\n') {
                emit(start, i);
                start = j;
                i = j - 1;
            }
        }
    }
    emit(start, s.size());
    return out;
}

namespace detail {

inline bool has_word_content(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) { return text::is_word_byte(c); });
}

/// Index range of tokens overlapping `span`.
inline Span token_range(const std::vector<Span>& tokens, Span span) {
    auto first = std::lower_bound(tokens.begin(), tokens.end(), span.begin,
                                  [](const Span& t, std::size_t pos) { return t.end <= pos; });
    auto last = std::lower_bound(first, tokens.end(), span.end,
                                 [](const Span& t, std::size_t pos) { return t.begin < pos; });
    return {static_cast<std::size_t>(first - tokens.begin()), static_cast<std::size_t>(last - tokens.begin())};
}

} // namespace detail

/// Sentence-level cosine chunking: consecutive sentences share a chunk iff the
/// cosine of their embeddings is >= threshold. Chunk text is the chunk's
/// sentences joined by a single space. Sentences without any word content
/// (e.g. "---") cannot be embedded and stay with the preceding sentence.
inline std::vector<Chunk> chunk_cosine(const Document& doc, double threshold, const Embedder& embedder,
                                       const Tokenizer& tokenizer = *default_tokenizer()) {
    if (!(threshold >= -1.0 && threshold <= 1.0))
        throw UsageError("cosine threshold must lie in [-1, 1]");
    auto sentences = split_sentences(doc);
    if (sentences.empty())
        throw DataError("chunk_cosine: document '" + doc.doc_id + "' has no sentences");

    std::vector<std::string> embeddable;
    std::vector<std::size_t> slot(sentences.size(), SIZE_MAX);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (detail::has_word_content(sentences[i].text)) {
            slot[i] = embeddable.size();
            embeddable.push_back(sentences[i].text);
        }
    }
    auto vectors = embedder.embed_batch(embeddable);

    // groups[g] = [first, last] sentence indices
    std::vector<std::pair<std::size_t, std::size_t>> groups{{0, 0}};
    std::size_t last_embedded = slot[0] != SIZE_MAX ? 0 : SIZE_MAX;
    for (std::size_t i = 1; i < sentences.size(); ++i) {
        bool boundary = false;
        if (slot[i] != SIZE_MAX) {
            if (last_embedded != SIZE_MAX)
                boundary = cosine(vectors[slot[last_embedded]], vectors[slot[i]]) < threshold;
            last_embedded = i;
        }
        if (boundary)
            groups.push_back({i, i});
        else
            groups.back().second = i;
    }

    auto tokens = tokenizer.tokenize(doc.text);
    std::vector<Chunk> out;
    for (auto [first, last] : groups) {
        Chunk c;
        c.doc_id = doc.doc_id;
        c.seq_index = out.size();
        c.chunk_id = make_chunk_id(doc.doc_id, c.seq_index);
        for (auto i = first; i <= last; ++i) {
            if (i > first)
                c.text += ' ';
            c.text += sentences[i].text;
        }
        c.char_span = {sentences[first].char_span.begin, sentences[last].char_span.end};
        c.token_span = detail::token_range(tokens, c.char_span);
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace chop
