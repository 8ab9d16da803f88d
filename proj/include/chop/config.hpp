#pragma once

#include <chop/error.hpp>
#include <chop/hnsw.hpp>
#include <chop/text.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace chop {

enum class Strategy { chop, naive_500t, cosine_chunking };

inline constexpr Strategy all_strategies[] = {Strategy::chop, Strategy::naive_500t, Strategy::cosine_chunking};

inline std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::chop:
        return "CHOP";
    case Strategy::naive_500t:
        return "NAIVE_500T";
    case Strategy::cosine_chunking:
        return "COSINE_CHUNKING";
    }
    return "?";
}

inline Strategy parse_strategy(std::string_view name) {
    auto n = text::to_lower(name);
    std::replace(n.begin(), n.end(), '-', '_');
    if (n == "chop")
        return Strategy::chop;
    if (n == "naive_500t" || n == "naive")
        return Strategy::naive_500t;
    if (n == "cosine_chunking" || n == "cosine")
        return Strategy::cosine_chunking;
    throw UsageError("unknown strategy '" + std::string(name) + "' (expected CHOP, NAIVE_500T or COSINE_CHUNKING)");
}

struct PipelineConfig {
    Strategy strategy = Strategy::chop;

    std::size_t chop_chunk_size = 500;
    std::size_t chop_chunk_overlap = 0;
    std::size_t naive_chunk_size = 500;
    std::size_t naive_chunk_overlap = 100;
    double cosine_threshold = 0.35;
    std::string stitch_joiner = "\n";

    // embedder
    std::string embedder_backend = "hash"; ///< hash | remote
    std::size_t embedder_dimension = 3072;
    std::uint64_t embedder_seed = 42;
    std::string embedder_endpoint;
    std::string embedder_model;
    std::size_t embedder_batch = 64;

    // chat gateway
    std::string gateway_backend = "scripted"; ///< scripted | remote | record
    std::string gateway_endpoint;
    std::string gateway_model;
    std::string transcript;
    std::string api_key_env = "CHOP_API_KEY";
    std::size_t max_in_flight = 4;
    int max_attempts = 3;
    long backoff_ms = 500;
    int max_output_tokens = 512;
    long timeout_s = 120;

    std::size_t anchor_cap = 600;
    std::vector<std::size_t> k_list{1, 3, 5, 10};
    std::size_t generate_k = 5;
    bool generate_answers = false;
    double min_overlap = 0.5;

    bool use_ann = false;
    HnswParams hnsw{};

    // paths
    std::string corpus;
    std::string queries;
    std::string index;
    std::string report_dir;
    std::string audit_log;
    std::string cnm_prompt;
    std::string continuity_prompt;
    std::string answer_prompt;

    /// Apply one `key = value` setting.
    void set(const std::string& key, const std::string& raw);

    void validate() const {
        if (k_list.empty())
            throw UsageError("k_list must not be empty");
        if (!std::is_sorted(k_list.begin(), k_list.end()) ||
            std::adjacent_find(k_list.begin(), k_list.end()) != k_list.end() || k_list.front() < 1)
            throw UsageError("k_list must be strictly ascending positive integers");
        if (chop_chunk_overlap >= chop_chunk_size || naive_chunk_overlap >= naive_chunk_size)
            throw UsageError("chunk overlap must be smaller than chunk size");
        if (cosine_threshold < -1.0 || cosine_threshold > 1.0)
            throw UsageError("cosine_threshold must lie in [-1, 1]");
        if (min_overlap <= 0.0 || min_overlap > 1.0)
            throw UsageError("min_overlap must lie in (0, 1]");
        if (generate_k < 1)
            throw UsageError("generate_k must be at least 1");
        if (embedder_backend != "hash" && embedder_backend != "remote")
            throw UsageError("embedder.backend must be hash or remote");
        if (gateway_backend != "scripted" && gateway_backend != "remote" && gateway_backend != "record")
            throw UsageError("gateway.backend must be scripted, remote or record");
    }

    std::size_t max_k() const { return k_list.empty() ? 0 : k_list.back(); }

    nlohmann::json to_json() const {
        return {{"strategy", to_string(strategy)},
                {"chop.chunk_size", chop_chunk_size},
                {"chop.chunk_overlap", chop_chunk_overlap},
                {"naive.chunk_size", naive_chunk_size},
                {"naive.chunk_overlap", naive_chunk_overlap},
                {"cosine.threshold", cosine_threshold},
                {"stitch.joiner", stitch_joiner},
                {"embedder.backend", embedder_backend},
                {"embedder.dimension", embedder_dimension},
                {"embedder.seed", embedder_seed},
                {"embedder.endpoint", embedder_endpoint},
                {"embedder.model", embedder_model},
                {"embedder.batch", embedder_batch},
                {"gateway.backend", gateway_backend},
                {"gateway.endpoint", gateway_endpoint},
                {"gateway.model", gateway_model},
                {"gateway.transcript", transcript},
                {"gateway.max_in_flight", max_in_flight},
                {"gateway.max_attempts", max_attempts},
                {"gateway.backoff_ms", backoff_ms},
                {"gateway.max_output_tokens", max_output_tokens},
                {"anchor_cap", anchor_cap},
                {"k_list", k_list},
                {"generate_k", generate_k},
                {"generate_answers", generate_answers},
                {"min_overlap", min_overlap},
                {"search", use_ann ? "ann" : "exact"},
                {"hnsw.m", hnsw.m},
                {"hnsw.ef_construction", hnsw.ef_construction},
                {"hnsw.ef_search", hnsw.ef_search},
                {"hnsw.seed", hnsw.seed}};
    }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, std::string_view v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw UsageError("config key '" + key + "': cannot parse '" + std::string(v) + "' as a number");
    return out;
}

inline bool parse_bool(const std::string& key, std::string_view v) {
    auto s = text::to_lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on")
        return true;
    if (s == "false" || s == "0" || s == "no" || s == "off")
        return false;
    throw UsageError("config key '" + key + "': expected a boolean, got '" + std::string(v) + "'");
}

/// Undo "\n", "\t" and "\\" escapes.
inline std::string unescape(std::string_view v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == '\\' && i + 1 < v.size()) {
            char n = v[++i];
            out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
        } else {
            out.push_back(v[i]);
        }
    }
    return out;
}

} // namespace detail

inline void PipelineConfig::set(const std::string& key, const std::string& raw) {
    auto v = std::string(text::trim(raw));
    using detail::parse_number;
    auto size = [&] { return parse_number<std::size_t>(key, v); };
    auto real = [&] { return parse_number<double>(key, v); };

    if (key == "strategy")
        strategy = parse_strategy(v);
    else if (key == "chop.chunk_size")
        chop_chunk_size = size();
    else if (key == "chop.chunk_overlap")
        chop_chunk_overlap = size();
    else if (key == "naive.chunk_size")
        naive_chunk_size = size();
    else if (key == "naive.chunk_overlap")
        naive_chunk_overlap = size();
    else if (key == "cosine.threshold")
        cosine_threshold = real();
    else if (key == "stitch.joiner")
        stitch_joiner = detail::unescape(v);
    else if (key == "embedder.backend")
        embedder_backend = v;
    else if (key == "embedder.dimension")
        embedder_dimension = size();
    else if (key == "embedder.seed")
        embedder_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "embedder.endpoint")
        embedder_endpoint = v;
    else if (key == "embedder.model")
        embedder_model = v;
    else if (key == "embedder.batch")
        embedder_batch = size();
    else if (key == "gateway.backend")
        gateway_backend = v;
    else if (key == "gateway.endpoint")
        gateway_endpoint = v;
    else if (key == "gateway.model")
        gateway_model = v;
    else if (key == "gateway.transcript" || key == "transcript")
        transcript = v;
    else if (key == "gateway.api_key_env")
        api_key_env = v;
    else if (key == "gateway.max_in_flight")
        max_in_flight = size();
    else if (key == "gateway.max_attempts")
        max_attempts = parse_number<int>(key, v);
    else if (key == "gateway.backoff_ms")
        backoff_ms = parse_number<long>(key, v);
    else if (key == "gateway.max_output_tokens")
        max_output_tokens = parse_number<int>(key, v);
    else if (key == "gateway.timeout_s")
        timeout_s = parse_number<long>(key, v);
    else if (key == "anchor_cap")
        anchor_cap = size();
    else if (key == "k_list") {
        k_list.clear();
        std::size_t start = 0;
        while (start <= v.size()) {
            auto comma = v.find(',', start);
            auto item = text::trim(std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos
                                                                                             : comma - start));
            if (!item.empty())
                k_list.push_back(parse_number<std::size_t>(key, item));
            if (comma == std::string::npos)
                break;
            start = comma + 1;
        }
    } else if (key == "generate_k")
        generate_k = size();
    else if (key == "generate_answers")
        generate_answers = detail::parse_bool(key, v);
    else if (key == "min_overlap")
        min_overlap = real();
    else if (key == "search") {
        if (v != "exact" && v != "ann")
            throw UsageError("search must be exact or ann");
        use_ann = v == "ann";
    } else if (key == "hnsw.m")
        hnsw.m = size();
    else if (key == "hnsw.ef_construction")
        hnsw.ef_construction = size();
    else if (key == "hnsw.ef_search")
        hnsw.ef_search = size();
    else if (key == "hnsw.seed")
        hnsw.seed = parse_number<std::uint64_t>(key, v);
    else if (key == "corpus")
        corpus = v;
    else if (key == "queries")
        queries = v;
    else if (key == "index")
        index = v;
    else if (key == "report_dir")
        report_dir = v;
    else if (key == "audit_log")
        audit_log = v;
    else if (key == "prompts.cnm")
        cnm_prompt = v;
    else if (key == "prompts.continuity")
        continuity_prompt = v;
    else if (key == "prompts.answer")
        answer_prompt = v;
    else
        throw UsageError("unknown config key '" + key + "'");
}

/// Flat `key = value` file; '#' starts a comment line.
inline PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {}) {
    std::ifstream in(path);
    if (!in)
        throw UsageError("config file not found: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = text::trim(line);
        if (t.empty() || t.front() == '#')
            continue;
        auto eq = t.find('=');
        if (eq == std::string_view::npos)
            throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        base.set(std::string(text::trim(t.substr(0, eq))), std::string(t.substr(eq + 1)));
    }
    return base;
}

} // namespace chop
