#pragma once

// End-to-end orchestration: ingest under one chunking strategy, query,
// answer generation, and the three-strategy comparison.

#include <chop/composer.hpp>
#include <chop/config.hpp>
#include <chop/continuity.hpp>
#include <chop/corpus.hpp>
#include <chop/evalkit.hpp>
#include <chop/llm_gateway.hpp>
#include <chop/prompts.hpp>
#include <chop/remote_chat.hpp>
#include <chop/remote_embedder.hpp>
#include <chop/vecstore.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace chop {

// ---------------------------------------------------------------------------
// Backends from configuration

inline std::shared_ptr<const Embedder> make_embedder(const PipelineConfig& cfg) {
    if (cfg.embedder_backend == "hash")
        return std::make_shared<HashEmbedder>(cfg.embedder_dimension, cfg.embedder_seed);
    RemoteEmbedderConfig rc;
    rc.endpoint = cfg.embedder_endpoint;
    rc.model = cfg.embedder_model;
    rc.dimension = cfg.embedder_dimension;
    rc.batch_size = cfg.embedder_batch;
    rc.retry = {cfg.max_attempts, std::chrono::milliseconds(cfg.backoff_ms), 2.0};
    rc.timeout = std::chrono::seconds(cfg.timeout_s);
    if (const char* key = std::getenv(cfg.api_key_env.c_str()))
        rc.api_key = key;
    return std::make_shared<RemoteEmbedder>(std::move(rc));
}

inline std::shared_ptr<ChatGateway> make_gateway(const PipelineConfig& cfg) {
    std::shared_ptr<ChatBackend> backend;
    if (cfg.gateway_backend == "scripted") {
        if (cfg.transcript.empty())
            throw UsageError("scripted gateway needs a transcript path");
        backend = std::make_shared<ScriptedBackend>(Transcript::load(cfg.transcript));
    } else {
        if (cfg.gateway_endpoint.empty())
            throw UsageError("remote gateway needs gateway.endpoint");
        RemoteChatConfig rc;
        rc.endpoint = cfg.gateway_endpoint;
        rc.model = cfg.gateway_model;
        rc.retry = {cfg.max_attempts, std::chrono::milliseconds(cfg.backoff_ms), 2.0};
        rc.timeout = std::chrono::seconds(cfg.timeout_s);
        if (const char* key = std::getenv(cfg.api_key_env.c_str()))
            rc.api_key = key;
        backend = std::make_shared<RemoteChatBackend>(std::move(rc));
        if (cfg.gateway_backend == "record") {
            if (cfg.transcript.empty())
                throw UsageError("recording gateway needs a transcript path");
            backend = std::make_shared<RecordingBackend>(std::move(backend), cfg.transcript);
        }
    }
    return std::make_shared<ChatGateway>(std::move(backend), static_cast<std::ptrdiff_t>(cfg.max_in_flight),
                                         cfg.max_output_tokens);
}

struct PromptSet {
    PromptTemplate cnm = prompts::cnm_extract();
    PromptTemplate continuity = prompts::continuity();
    PromptTemplate answer = prompts::answer();

    static PromptSet from_config(const PipelineConfig& cfg) {
        PromptSet p;
        if (!cfg.cnm_prompt.empty())
            p.cnm = PromptTemplate::from_file(cfg.cnm_prompt, "cnm_extract", "file:" + cfg.cnm_prompt);
        if (!cfg.continuity_prompt.empty())
            p.continuity = PromptTemplate::from_file(cfg.continuity_prompt, "continuity", "file:" + cfg.continuity_prompt);
        if (!cfg.answer_prompt.empty())
            p.answer = PromptTemplate::from_file(cfg.answer_prompt, "answer", "file:" + cfg.answer_prompt);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Manifest

struct StageCounters {
    long documents = 0;
    long stitched_files = 0;
    long chunks = 0;
    long extractions = 0;
    long decisions = 0;
    long false_decisions = 0;
    long embeddings = 0;
    long gateway_calls = 0;
};

struct RunManifest {
    nlohmann::json config;
    std::string corpus_digest;
    std::string started_at;
    std::string finished_at;
    StageCounters counters;
    nlohmann::json prompt_versions;
    std::string store_checksum;

    nlohmann::json to_json() const {
        return {{"config", config},
                {"corpus_digest", corpus_digest},
                {"started_at", started_at},
                {"finished_at", finished_at},
                {"counters",
                 {{"documents", counters.documents},
                  {"stitched_files", counters.stitched_files},
                  {"chunks", counters.chunks},
                  {"extractions", counters.extractions},
                  {"decisions", counters.decisions},
                  {"false_decisions", counters.false_decisions},
                  {"embeddings", counters.embeddings},
                  {"gateway_calls", counters.gateway_calls}}},
                {"prompt_versions", prompt_versions},
                {"store_checksum", store_checksum}};
    }
};

inline std::string utc_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// SHA-256 over (doc_id, text) of every record, in order.
inline std::string corpus_digest(const std::vector<Document>& docs) {
    Sha256 h;
    for (const auto& d : docs) {
        h.update(d.doc_id).update("\x1f", 1);
        h.update(d.text).update("\x1e", 1);
    }
    return to_hex(h.finish());
}

/// Write `content` to `path` via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write " + tmp.string());
        out << content;
        if (!out)
            throw DataError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Ingestion

struct IngestResult {
    VectorStore store;
    RunManifest manifest;
    std::vector<AnnotatedChunk> chain; ///< CHOP only: the annotated chunks in index order
};

namespace detail {

/// Run `fn`, prefixing any library error with the stage and item it hit.
template <class Fn>
auto in_stage(std::string_view stage, std::string_view item, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(e.kind(), "stage " + std::string(stage) + " [" + std::string(item) + "]: " + e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorKind::data, "stage " + std::string(stage) + " [" + std::string(item) + "]: " + e.what());
    }
}

struct FileOutput {
    std::vector<IndexedChunk> items;
    std::vector<AnnotatedChunk> chain;
    ChainStats stats;
};

inline std::vector<EmbeddingVector> embed_all(const Embedder& embedder, const std::vector<std::string>& texts,
                                              std::string_view item) {
    return in_stage("embed", item, [&] { return embedder.embed_batch(texts); });
}

inline FileOutput ingest_file(const Document& doc, const PipelineConfig& cfg, const Embedder& embedder,
                              ChatGateway* gateway, const PromptSet& prompts) {
    FileOutput out;
    std::vector<Chunk> chunks;
    std::vector<std::string> x_texts;
    std::vector<std::optional<CNM>> cnms;
    std::vector<std::string> origins;
    std::vector<std::size_t> prefix_lengths;
    auto tag = to_string(cfg.strategy);

    switch (cfg.strategy) {
    case Strategy::chop: {
        if (!gateway)
            throw UsageError("CHOP ingestion needs a chat gateway");
        chunks = in_stage("chunk_fixed", doc.doc_id,
                          [&] { return chunk_fixed(doc, cfg.chop_chunk_size, cfg.chop_chunk_overlap); });
        ChainOptions opts{cfg.anchor_cap, prompts.cnm, prompts.continuity};
        out.chain = in_stage("continuity", doc.doc_id, [&] { return run_chain(chunks, *gateway, opts, &out.stats); });
        for (const auto& a : out.chain) {
            auto composed = compose(a.cnm, a.chunk);
            prefix_lengths.push_back(composed.prefix.empty() ? 0 : composed.prefix.size() + 1);
            x_texts.push_back(std::move(composed.x_text));
            cnms.push_back(a.cnm);
            origins.push_back(to_string(a.origin));
        }
        break;
    }
    case Strategy::naive_500t:
        chunks = in_stage("chunk_fixed", doc.doc_id,
                          [&] { return chunk_fixed(doc, cfg.naive_chunk_size, cfg.naive_chunk_overlap); });
        break;
    case Strategy::cosine_chunking:
        chunks = in_stage("chunk_cosine", doc.doc_id,
                          [&] { return chunk_cosine(doc, cfg.cosine_threshold, embedder); });
        break;
    }
    if (cfg.strategy != Strategy::chop) {
        for (const auto& c : chunks) {
            x_texts.push_back(c.text);
            cnms.emplace_back();
            origins.emplace_back();
            prefix_lengths.push_back(0);
        }
    }

    auto vectors = embed_all(embedder, x_texts, doc.doc_id);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto& c = chunks[i];
        IndexedChunk item;
        item.id = c.chunk_id;
        item.x_text = std::move(x_texts[i]);
        item.vector = std::move(vectors[i]);
        item.metadata.doc_id = c.doc_id;
        item.metadata.seq_index = c.seq_index;
        item.metadata.cnm = std::move(cnms[i]);
        item.metadata.cnm_origin = std::move(origins[i]);
        item.metadata.strategy = tag;
        item.metadata.prefix_length = prefix_lengths[i];
        item.metadata.char_span = c.char_span;
        item.metadata.sources = doc.resolve(c.char_span);
        out.items.push_back(std::move(item));
    }
    return out;
}

} // namespace detail

/// Build an index for `cfg.strategy`. Stitched files are processed
/// concurrently; within a file the CHOP chain is sequential. Items are
/// inserted in file order so the result does not depend on scheduling.
inline IngestResult ingest(const std::vector<Document>& docs, const PipelineConfig& cfg, const Embedder& embedder,
                           ChatGateway* gateway, const PromptSet& prompts = {}) {
    cfg.validate();
    if (docs.empty())
        throw DataError("corpus is empty");
    RunManifest manifest;
    manifest.started_at = utc_now();
    manifest.config = cfg.to_json();
    manifest.config["strategy"] = to_string(cfg.strategy);
    manifest.corpus_digest = corpus_digest(docs);
    manifest.prompt_versions = {{"cnm", prompts.cnm.id()},
                                {"continuity", prompts.continuity.id()},
                                {"answer", prompts.answer.id()}};
    auto calls_before = gateway ? gateway->calls() : 0;

    auto files = stitch_corpus(docs, cfg.stitch_joiner);
    std::vector<std::future<detail::FileOutput>> jobs;
    for (const auto& f : files)
        jobs.push_back(std::async(std::launch::async, [&, &file = f] {
            return detail::ingest_file(file, cfg, embedder, gateway, prompts);
        }));
    std::vector<detail::FileOutput> outputs;
    std::exception_ptr failure;
    for (auto& j : jobs) {
        try {
            outputs.push_back(j.get());
        } catch (...) {
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);

    IngestResult result{VectorStore(embedder.dimension(), embedder.descriptor()), std::move(manifest), {}};
    auto& store = result.store;
    store.attributes() = {{"strategy", to_string(cfg.strategy)},
                          {"tokenizer", default_tokenizer()->name()},
                          {"prefix_format", cfg.strategy == Strategy::chop ? std::string(prefix_format_version) : ""},
                          {"corpus_digest", result.manifest.corpus_digest}};
    auto& counters = result.manifest.counters;
    counters.documents = static_cast<long>(docs.size());
    counters.stitched_files = static_cast<long>(files.size());
    for (auto& o : outputs) {
        counters.extractions += o.stats.extractions;
        counters.decisions += o.stats.decisions;
        counters.false_decisions += o.stats.false_decisions;
        counters.chunks += static_cast<long>(o.items.size());
        counters.embeddings += static_cast<long>(o.items.size());
        for (auto& item : o.items) {
            auto id = item.id;
            detail::in_stage("insert", id, [&] { store.insert(std::move(item)); });
        }
        for (auto& a : o.chain)
            result.chain.push_back(std::move(a));
    }
    if (cfg.use_ann)
        store.build_ann(cfg.hnsw);
    counters.gateway_calls = gateway ? gateway->calls() - calls_before : 0;
    result.manifest.store_checksum = store.checksum();
    result.manifest.finished_at = utc_now();
    return result;
}

// ---------------------------------------------------------------------------
// Query and generation

/// Embed the raw query (never prefixed) and search.
inline std::vector<SearchHit> query_store(const VectorStore& store, const Embedder& embedder, std::string_view query,
                                          std::size_t k, bool use_ann = false) {
    if (k < 1)
        throw UsageError("k must be at least 1");
    if (store.empty())
        throw DataError("index is empty");
    if (use_ann && !store.has_ann())
        throw UsageError("ANN search requested but the index has no HNSW graph (ingest with search = ann)");
    auto q = embedder.embed(query);
    return use_ann ? store.search_ann(q, k) : store.search_exact(q, k);
}

/// Question plus numbered evidence blocks "[1] ...", in rank order.
inline std::string build_answer_prompt(std::string_view question, const std::vector<std::string>& evidence,
                                       const PromptTemplate& tmpl = prompts::answer()) {
    std::string blocks;
    for (std::size_t i = 0; i < evidence.size(); ++i) {
        if (i)
            blocks += "\n\n";
        blocks += "[" + std::to_string(i + 1) + "] " + evidence[i];
    }
    return tmpl.fill({{"question", std::string(question)}, {"evidence", blocks}});
}

struct GenerationResult {
    std::string answer;
    std::string prompt;
    std::vector<SearchHit> hits;
};

inline GenerationResult generate_answer(const VectorStore& store, const Embedder& embedder, ChatGateway& gateway,
                                        std::string_view question, std::size_t k, bool use_ann = false,
                                        const PromptTemplate& tmpl = prompts::answer()) {
    GenerationResult r;
    r.hits = query_store(store, embedder, question, k, use_ann);
    std::vector<std::string> evidence;
    for (const auto& h : r.hits)
        evidence.push_back(store.get(h.id)->x_text);
    r.prompt = build_answer_prompt(question, evidence, tmpl);
    r.answer = std::string(text::trim(gateway.ask(r.prompt).text));
    spdlog::info("generate: k={} answer={:.80}", k, r.answer);
    return r;
}

// ---------------------------------------------------------------------------
// Comparison

inline RetrievalRun retrieve_all(const VectorStore& store, const Embedder& embedder,
                                 const std::vector<QueryRecord>& queries, std::size_t k, bool use_ann,
                                 const std::string& strategy) {
    RetrievalRun run;
    run.strategy = strategy;
    run.k = k;
    for (const auto& q : queries) {
        auto hits = query_store(store, embedder, q.text, k, use_ann);
        auto& out = run.hits[q.query_id];
        for (const auto& h : hits)
            out.push_back({h.id, h.score, store.get(h.id)->metadata.sources});
    }
    return run;
}

/// Gold spans must name corpus records and stay inside them.
inline void check_gold(const std::vector<QueryRecord>& queries, const std::vector<Document>& docs) {
    std::unordered_map<std::string, std::size_t> length;
    for (const auto& d : docs)
        length[d.doc_id] = d.text.size();
    for (const auto& q : queries) {
        if (q.gold.empty())
            throw DataError("query '" + q.query_id + "' has no gold spans");
        for (const auto& g : q.gold) {
            auto it = length.find(g.doc_id);
            if (it == length.end())
                throw DataError("query '" + q.query_id + "' cites unknown doc_id '" + g.doc_id + "'");
            if (g.span.end > it->second)
                throw DataError("query '" + q.query_id + "' gold span exceeds document '" + g.doc_id + "'");
        }
    }
}

struct StrategyOutcome {
    std::vector<MetricRow> rows;
    std::optional<RunManifest> manifest;
};

/// Score one strategy at every K. Errors become rows marked with the failure.
inline StrategyOutcome evaluate_strategy(Strategy strategy, const std::vector<Document>& docs,
                                         const std::vector<QueryRecord>& queries, PipelineConfig cfg,
                                         const Embedder& embedder, ChatGateway* gateway, const PromptSet& prompts) {
    cfg.strategy = strategy;
    auto tag = to_string(strategy);
    StrategyOutcome out;
    try {
        auto ingested = ingest(docs, cfg, embedder, gateway, prompts);
        auto run = retrieve_all(ingested.store, embedder, queries, cfg.max_k(), cfg.use_ann, tag);
        for (auto k : cfg.k_list) {
            QueryScores s;
            for (const auto& q : queries) {
                s.hit.push_back(hit_at_k(run, q, k, cfg.min_overlap));
                s.mrr.push_back(mrr_at_k(run, q, k, cfg.min_overlap));
                s.ndcg.push_back(ndcg_at_k(run, q, k, cfg.min_overlap));
                if (cfg.generate_answers && q.reference_answer) {
                    if (!gateway)
                        throw UsageError("answer generation needs a chat gateway");
                    auto g = generate_answer(ingested.store, embedder, *gateway, q.text, k, cfg.use_ann,
                                             prompts.answer);
                    s.f1.push_back(token_f1(g.answer, *q.reference_answer));
                    s.rouge_l.push_back(rouge_l(g.answer, *q.reference_answer));
                    s.sem.push_back(sem_score(g.answer, *q.reference_answer, embedder).f);
                }
            }
            out.rows.push_back(aggregate(tag, k, s));
        }
        out.manifest = std::move(ingested.manifest);
    } catch (const std::exception& e) {
        spdlog::error("compare: strategy {} failed: {}", tag, e.what());
        out.rows.clear();
        for (auto k : cfg.k_list) {
            MetricRow r;
            r.strategy = tag;
            r.k = k;
            r.error = e.what();
            out.rows.push_back(std::move(r));
        }
    }
    return out;
}

struct CompareResult {
    MetricReport report;
    std::vector<std::optional<RunManifest>> manifests; ///< per strategy, in report order
};

/// Build all three indexes with the same embedder and search settings, run
/// every query at every K, and tabulate. Strategies run concurrently.
inline CompareResult compare_strategies(const std::vector<Document>& docs, const std::vector<QueryRecord>& queries,
                                        const PipelineConfig& cfg, const Embedder& embedder, ChatGateway* gateway,
                                        const PromptSet& prompts = {}) {
    cfg.validate();
    if (queries.empty())
        throw DataError("query set is empty");
    check_gold(queries, docs);

    std::vector<std::future<StrategyOutcome>> jobs;
    for (auto s : all_strategies)
        jobs.push_back(std::async(std::launch::async, [&, s] {
            return evaluate_strategy(s, docs, queries, cfg, embedder, gateway, prompts);
        }));

    CompareResult result;
    result.report.query_count = queries.size();
    for (auto& j : jobs) {
        auto outcome = j.get();
        for (auto& r : outcome.rows)
            result.report.rows.push_back(std::move(r));
        result.manifests.push_back(std::move(outcome.manifest));
    }
    result.report.notes = {
        "relevance: a hit counts when it covers >= " + detail::fmt_metric(cfg.min_overlap, 2) + " of a gold span",
        "mrr: queries without a relevant hit in the top K contribute 0",
        "ndcg: binary gains; each gold span is credited to at most one hit",
        "sem_score: greedy token matching under the configured embedder (approximation)",
        "embedder: " + embedder.descriptor() + "; search: " + std::string(cfg.use_ann ? "ann" : "exact")};
    if (!cfg.generate_answers)
        result.report.notes.push_back("generation metrics not computed (generate_answers = false)");
    return result;
}

inline void write_reports(const MetricReport& report, const std::filesystem::path& dir) {
    std::ostringstream csv, table;
    write_csv(csv, report);
    write_table(table, report);
    write_file_atomic(dir / "report.csv", csv.str());
    write_file_atomic(dir / "report.txt", table.str());
}

} // namespace chop
