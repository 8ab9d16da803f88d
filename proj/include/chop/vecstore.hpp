#pragma once

#include <chop/cnm.hpp>
#include <chop/corpus.hpp>
#include <chop/digest.hpp>
#include <chop/embedding.hpp>
#include <chop/error.hpp>
#include <chop/hnsw.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

namespace chop {

struct ChunkMetadata {
    std::string doc_id;
    std::size_t seq_index = 0;
    std::optional<CNM> cnm;
    std::string cnm_origin; ///< "EXTRACTED" / "INHERITED"; empty for baselines
    std::string strategy;
    std::size_t prefix_length = 0;
    Span char_span;               ///< in the chunked (stitched) document
    std::vector<SourceRef> sources; ///< the same region in original record coordinates

    friend bool operator==(const ChunkMetadata&, const ChunkMetadata&) = default;
};

inline void to_json(nlohmann::json& j, const ChunkMetadata& m) {
    auto sources = nlohmann::json::array();
    for (const auto& s : m.sources)
        sources.push_back({{"doc_id", s.doc_id}, {"start", s.span.begin}, {"end", s.span.end}});
    j = {{"doc_id", m.doc_id},
         {"seq_index", m.seq_index},
         {"cnm", m.cnm ? nlohmann::json(*m.cnm) : nlohmann::json(nullptr)},
         {"cnm_origin", m.cnm_origin},
         {"strategy", m.strategy},
         {"prefix_length", m.prefix_length},
         {"char_span", {m.char_span.begin, m.char_span.end}},
         {"sources", std::move(sources)}};
}

inline void from_json(const nlohmann::json& j, ChunkMetadata& m) {
    m.doc_id = j.at("doc_id").get<std::string>();
    m.seq_index = j.at("seq_index").get<std::size_t>();
    if (!j.at("cnm").is_null())
        m.cnm = j.at("cnm").get<CNM>();
    else
        m.cnm.reset();
    m.cnm_origin = j.at("cnm_origin").get<std::string>();
    m.strategy = j.at("strategy").get<std::string>();
    m.prefix_length = j.at("prefix_length").get<std::size_t>();
    m.char_span = {j.at("char_span").at(0).get<std::size_t>(), j.at("char_span").at(1).get<std::size_t>()};
    m.sources.clear();
    for (const auto& s : j.at("sources"))
        m.sources.push_back({s.at("doc_id").get<std::string>(),
                             {s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>()}});
}

struct IndexedChunk {
    std::string id;
    std::string x_text;
    EmbeddingVector vector;
    ChunkMetadata metadata;
};

struct SearchHit {
    std::string id;
    double score = 0.0;
    std::size_t rank = 0;     ///< 1-based
    std::size_t position = 0; ///< insertion position in the store
};

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_bytes(std::string_view s) { out_.append(s); }
    void put_str32(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }
    void put_str64(std::string_view s) {
        put(static_cast<std::uint64_t>(s.size()));
        put_bytes(s);
    }
    std::string& str() noexcept { return out_; }

private:
    std::string out_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view in) : in_(in) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view get_bytes(std::size_t n) {
        need(n);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string get_str32() { return std::string(get_bytes(get<std::uint32_t>())); }
    std::string get_str64() { return std::string(get_bytes(get<std::uint64_t>())); }
    bool done() const noexcept { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n)
            throw DataError("vector store file is corrupt (unexpected end of data)");
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Chunks with their vectors; exact and HNSW top-k cosine search.
///
/// Reads (get, search_*) are const and may run concurrently once writes have
/// stopped. insert and build_ann need exclusive access.
class VectorStore {
public:
    static constexpr char magic[8] = {'C', 'H', 'O', 'P', 'V', 'S', 'T', 'R'};
    static constexpr std::uint32_t format_version = 1;

    VectorStore(std::size_t dimension, std::string embedder_descriptor)
        : dimension_(dimension), embedder_descriptor_(std::move(embedder_descriptor)) {
        static_assert(std::endian::native == std::endian::little, "store format assumes little-endian");
        if (dimension_ == 0)
            throw UsageError("vector store dimension must be positive");
    }

    std::size_t dimension() const noexcept { return dimension_; }
    const std::string& embedder_descriptor() const noexcept { return embedder_descriptor_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }

    /// Free-form descriptive attributes (strategy, prefix format, ...), persisted.
    nlohmann::json& attributes() noexcept { return attributes_; }
    const nlohmann::json& attributes() const noexcept { return attributes_; }

    void insert(IndexedChunk item) {
        if (item.vector.dimension() != dimension_)
            throw DataError("vector dimension " + std::to_string(item.vector.dimension()) +
                            " does not match store dimension " + std::to_string(dimension_));
        for (double v : item.vector.values)
            if (!std::isfinite(v))
                throw DataError("vector for '" + item.id + "' has non-finite entries");
        if (by_id_.contains(item.id))
            throw DataError("duplicate id '" + item.id + "'");
        by_id_.emplace(item.id, items_.size());
        items_.push_back(std::move(item));
        if (ann_)
            ann_->insert(static_cast<HnswIndex::Id>(items_.size() - 1), vector_at());
    }

    const IndexedChunk* get(const std::string& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &items_[it->second];
    }

    const IndexedChunk& at(std::size_t position) const { return items_.at(position); }
    const std::vector<IndexedChunk>& items() const noexcept { return items_; }

    /// Exhaustive scan. Ties keep insertion order.
    std::vector<SearchHit> search_exact(const EmbeddingVector& query, std::size_t k) const {
        check_query(query, k);
        std::vector<std::pair<double, std::size_t>> scored;
        scored.reserve(items_.size());
        for (std::size_t i = 0; i < items_.size(); ++i)
            scored.push_back({score(query, items_[i].vector), i});
        auto n = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), by_score);
        scored.resize(n);
        return to_hits(scored);
    }

    bool has_ann() const noexcept { return ann_.has_value(); }
    const HnswIndex* ann() const noexcept { return ann_ ? &*ann_ : nullptr; }

    void build_ann(HnswParams params = {}) {
        ann_.emplace(params);
        auto at = vector_at();
        for (std::size_t i = 0; i < items_.size(); ++i)
            ann_->insert(static_cast<HnswIndex::Id>(i), at);
    }

    /// Approximate search through the HNSW graph; scores are exact cosines of
    /// the returned items. `ef` defaults to the index's ef_search.
    std::vector<SearchHit> search_ann(const EmbeddingVector& query, std::size_t k,
                                      std::optional<std::size_t> ef = std::nullopt) const {
        if (!ann_)
            throw UsageError("ANN index has not been built for this store");
        check_query(query, k);
        auto unit = query;
        normalize(unit);
        auto found = ann_->search(unit.values, std::min(k, items_.size()), ef.value_or(ann_->params().ef_search),
                                  vector_at());
        std::vector<std::pair<double, std::size_t>> scored;
        scored.reserve(found.size());
        for (auto& [d, id] : found)
            scored.push_back({score(query, items_[id].vector), id});
        std::sort(scored.begin(), scored.end(), by_score);
        return to_hits(scored);
    }

    // -- persistence ------------------------------------------------------------

    /// Serialized records and graph; the checksum in the file header covers exactly this.
    std::string serialize_body() const {
        detail::ByteWriter w;
        w.put_str32(attributes_.dump());
        w.put(static_cast<std::uint64_t>(items_.size()));
        for (const auto& it : items_) {
            w.put_str32(it.id);
            w.put_str64(it.x_text);
            w.put_str32(nlohmann::json(it.metadata).dump());
            w.put_bytes(std::string_view(reinterpret_cast<const char*>(it.vector.values.data()),
                                         it.vector.values.size() * sizeof(double)));
        }
        w.put(static_cast<std::uint8_t>(ann_ ? 1 : 0));
        if (ann_) {
            const auto& p = ann_->params();
            w.put(static_cast<std::uint64_t>(p.m));
            w.put(static_cast<std::uint64_t>(p.ef_construction));
            w.put(static_cast<std::uint64_t>(p.ef_search));
            w.put(static_cast<std::uint64_t>(p.seed));
            w.put(static_cast<std::uint32_t>(ann_->entry_point()));
            w.put(static_cast<std::int32_t>(ann_->max_level()));
            for (const auto& node : ann_->links()) {
                w.put(static_cast<std::uint32_t>(node.size()));
                for (const auto& level : node) {
                    w.put(static_cast<std::uint32_t>(level.size()));
                    for (auto n : level)
                        w.put(n);
                }
            }
        }
        return std::move(w.str());
    }

    /// Hex SHA-256 of the serialized body: equal checksums mean equal contents.
    std::string checksum() const { return sha256_hex(serialize_body()); }

    /// Write atomically (temporary file, then rename).
    void persist(const std::filesystem::path& path) const {
        auto body = serialize_body();
        auto digest = Sha256{}.update(body).finish();
        detail::ByteWriter w;
        w.put_bytes(std::string_view(magic, sizeof(magic)));
        w.put(format_version);
        w.put(static_cast<std::uint32_t>(dimension_));
        w.put_str32(embedder_descriptor_);
        w.put(static_cast<std::uint64_t>(body.size()));
        w.put_bytes(std::string_view(reinterpret_cast<const char*>(digest.data()), digest.size()));

        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out)
                throw DataError("cannot write vector store: " + tmp.string());
            out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
            out.write(body.data(), static_cast<std::streamsize>(body.size()));
            if (!out)
                throw DataError("write failed: " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
    }

    struct Loaded;

    /// Read a store. If `expected_descriptor` is given and differs from the
    /// stored embedder descriptor, a warning is returned alongside the store.
    static Loaded load(const std::filesystem::path& path, const std::optional<std::string>& expected_descriptor = {});

private:
    static bool by_score(const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    }

    static double score(const EmbeddingVector& q, const EmbeddingVector& v) {
        return std::clamp(cosine(q, v), -1.0, 1.0);
    }

    void check_query(const EmbeddingVector& query, std::size_t k) const {
        if (k < 1)
            throw UsageError("k must be at least 1");
        if (items_.empty())
            throw DataError("vector store is empty");
        if (query.dimension() != dimension_)
            throw DataError("query dimension " + std::to_string(query.dimension()) + " does not match store dimension " +
                            std::to_string(dimension_));
    }

    std::vector<SearchHit> to_hits(const std::vector<std::pair<double, std::size_t>>& scored) const {
        std::vector<SearchHit> hits;
        hits.reserve(scored.size());
        for (std::size_t r = 0; r < scored.size(); ++r)
            hits.push_back({items_[scored[r].second].id, scored[r].first, r + 1, scored[r].second});
        return hits;
    }

    HnswIndex::VectorAt vector_at() const {
        return [this](HnswIndex::Id id) { return std::span<const double>(items_[id].vector.values); };
    }

    std::size_t dimension_;
    std::string embedder_descriptor_;
    nlohmann::json attributes_ = nlohmann::json::object();
    std::vector<IndexedChunk> items_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::optional<HnswIndex> ann_;
};

struct VectorStore::Loaded {
    VectorStore store;
    std::vector<std::string> warnings;
};

inline VectorStore::Loaded VectorStore::load(const std::filesystem::path& path,
                                             const std::optional<std::string>& expected_descriptor) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("vector store not found: " + path.string());
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    detail::ByteReader header(raw);
    if (header.get_bytes(sizeof(magic)) != std::string_view(magic, sizeof(magic)))
        throw DataError(path.string() + ": not a vector store file");
    auto version = header.get<std::uint32_t>();
    if (version != format_version)
        throw DataError(path.string() + ": unsupported store version " + std::to_string(version));
    auto dimension = header.get<std::uint32_t>();
    auto descriptor = header.get_str32();
    auto body_len = header.get<std::uint64_t>();
    auto stored_digest = header.get_bytes(32);
    const std::size_t header_len = sizeof(magic) + 4 + 4 + 4 + descriptor.size() + 8 + 32;
    if (raw.size() - header_len != body_len)
        throw DataError(path.string() + ": checksum mismatch (file truncated or extended)");
    std::string_view body(raw.data() + header_len, body_len);
    auto digest = Sha256{}.update(body).finish();
    if (std::memcmp(digest.data(), stored_digest.data(), digest.size()) != 0)
        throw DataError(path.string() + ": checksum mismatch");

    Loaded out{VectorStore(dimension, descriptor), {}};
    auto& store = out.store;
    detail::ByteReader r(body);
    try {
        store.attributes_ = nlohmann::json::parse(r.get_str32());
        auto count = r.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            IndexedChunk item;
            item.id = r.get_str32();
            item.x_text = r.get_str64();
            item.metadata = nlohmann::json::parse(r.get_str32()).get<ChunkMetadata>();
            auto bytes = r.get_bytes(dimension * sizeof(double));
            item.vector.values.resize(dimension);
            std::memcpy(item.vector.values.data(), bytes.data(), bytes.size());
            store.insert(std::move(item));
        }
        if (r.get<std::uint8_t>() != 0) {
            HnswParams p;
            p.m = r.get<std::uint64_t>();
            p.ef_construction = r.get<std::uint64_t>();
            p.ef_search = r.get<std::uint64_t>();
            p.seed = r.get<std::uint64_t>();
            auto entry = r.get<std::uint32_t>();
            auto max_level = r.get<std::int32_t>();
            std::vector<std::vector<std::vector<HnswIndex::Id>>> links(store.size());
            for (auto& node : links) {
                node.resize(r.get<std::uint32_t>());
                for (auto& level : node) {
                    level.resize(r.get<std::uint32_t>());
                    for (auto& n : level) {
                        n = r.get<std::uint32_t>();
                        if (n >= store.size())
                            throw DataError("vector store graph references unknown node");
                    }
                }
            }
            store.ann_ = HnswIndex::restore(p, entry, max_level, std::move(links));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": corrupt metadata: " + e.what());
    }
    if (!r.done())
        throw DataError(path.string() + ": trailing data in store body");

    if (expected_descriptor && *expected_descriptor != descriptor)
        out.warnings.push_back("store was built with embedder '" + descriptor + "' but '" + *expected_descriptor +
                               "' is configured");
    return out;
}

/// One JSON line per hit: {"query_id", "rank", "id", "score"}.
inline void write_hits_jsonl(std::ostream& out, const std::string& query_id, const std::vector<SearchHit>& hits) {
    for (const auto& h : hits)
        out << nlohmann::json{{"query_id", query_id}, {"rank", h.rank}, {"id", h.id}, {"score", h.score}}.dump()
            << '\n';
}

} // namespace chop
