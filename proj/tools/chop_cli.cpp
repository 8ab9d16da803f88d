// chop: ingest / query / generate / compare / inspect.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.

#include <chop/chop.hpp>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string transcript;
    bool verbose = false;
};

chop::PipelineConfig resolve_config(const CommonOptions& o) {
    chop::PipelineConfig cfg;
    if (!o.config_path.empty())
        cfg = chop::load_config(o.config_path);
    for (const auto& kv : o.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw chop::UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.transcript.empty())
        cfg.transcript = o.transcript;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "Flat key = value config file");
    cmd->add_option("--set", o.overrides, "Override a config key (key=value); repeatable");
    cmd->add_option("--transcript", o.transcript, "Transcript file (replay, or record target)");
    cmd->add_flag("-v,--verbose", o.verbose, "Verbose logging");
}

chop::VectorStore open_store(const std::string& path, const chop::Embedder& embedder) {
    if (path.empty())
        throw chop::UsageError("no index path given (--index or index = ...)");
    auto loaded = chop::VectorStore::load(path, embedder.descriptor());
    for (const auto& w : loaded.warnings)
        spdlog::warn("{}", w);
    return std::move(loaded.store);
}

std::string snippet(std::string_view s, std::size_t chars) {
    auto head = chop::text::utf8_head(s, chars);
    auto out = chop::text::normalize_space(head);
    if (head.size() < s.size())
        out += " ...";
    return out;
}

int run_ingest(const CommonOptions& common, const std::string& strategy, const std::string& corpus,
               const std::string& index, bool ann, std::string manifest_path, const std::string& audit_log) {
    auto cfg = resolve_config(common);
    if (!strategy.empty())
        cfg.strategy = chop::parse_strategy(strategy);
    if (!corpus.empty())
        cfg.corpus = corpus;
    if (!index.empty())
        cfg.index = index;
    if (ann)
        cfg.use_ann = true;
    if (!audit_log.empty())
        cfg.audit_log = audit_log;
    if (cfg.corpus.empty() || cfg.index.empty())
        throw chop::UsageError("ingest needs a corpus and an index path");

    auto docs = chop::load_corpus(cfg.corpus);
    auto embedder = chop::make_embedder(cfg);
    std::shared_ptr<chop::ChatGateway> gateway;
    if (cfg.strategy == chop::Strategy::chop)
        gateway = chop::make_gateway(cfg);
    auto prompts = chop::PromptSet::from_config(cfg);

    auto result = chop::ingest(docs, cfg, *embedder, gateway.get(), prompts);
    result.store.persist(cfg.index);
    if (manifest_path.empty())
        manifest_path = cfg.index + ".manifest.json";
    chop::write_file_atomic(manifest_path, result.manifest.to_json().dump(2) + "\n");
    if (!cfg.audit_log.empty()) {
        std::ostringstream log;
        chop::write_audit_log(log, result.chain);
        chop::write_file_atomic(cfg.audit_log, log.str());
    }

    const auto& c = result.manifest.counters;
    std::cout << "strategy " << chop::to_string(cfg.strategy) << ": " << c.chunks << " chunks from "
              << c.stitched_files << " stitched file(s); " << c.extractions << " extractions, " << c.decisions
              << " decisions (" << c.false_decisions << " FALSE)\n"
              << "index: " << cfg.index << "\nmanifest: " << manifest_path << "\n";
    return 0;
}

int run_query(const CommonOptions& common, const std::string& index, std::size_t k, bool ann, bool exact,
              const std::string& text, const std::string& export_path, std::size_t snippet_chars) {
    auto cfg = resolve_config(common);
    if (!index.empty())
        cfg.index = index;
    if (k < 1)
        throw chop::UsageError("--k must be at least 1");
    bool use_ann = ann || (cfg.use_ann && !exact);
    auto embedder = chop::make_embedder(cfg);
    auto store = open_store(cfg.index, *embedder);
    auto hits = chop::query_store(store, *embedder, text, k, use_ann);

    for (const auto& h : hits) {
        std::printf("%2zu  %.6f  %s\n", h.rank, h.score, h.id.c_str());
        std::cout << "    " << snippet(store.get(h.id)->x_text, snippet_chars) << "\n";
    }
    if (!export_path.empty()) {
        std::ofstream out(export_path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw chop::DataError("cannot write " + export_path);
        chop::write_hits_jsonl(out, "query", hits);
    }
    return 0;
}

int run_generate(const CommonOptions& common, const std::string& index, std::optional<std::size_t> k,
                 std::string question, const std::string& queries_path, const std::string& query_id, bool ann) {
    auto cfg = resolve_config(common);
    if (!index.empty())
        cfg.index = index;
    if (question.empty()) {
        if (queries_path.empty() || query_id.empty())
            throw chop::UsageError("generate needs --question, or --queries with --query-id");
        for (const auto& q : chop::load_queries(queries_path))
            if (q.query_id == query_id)
                question = q.text;
        if (question.empty())
            throw chop::DataError("query '" + query_id + "' not found in " + queries_path);
    }
    auto kk = k.value_or(cfg.generate_k);
    if (kk < 1)
        throw chop::UsageError("--k must be at least 1");
    auto embedder = chop::make_embedder(cfg);
    auto store = open_store(cfg.index, *embedder);
    if (store.empty())
        throw chop::DataError("index is empty");
    auto gateway = chop::make_gateway(cfg);
    auto prompts = chop::PromptSet::from_config(cfg);
    auto result = chop::generate_answer(store, *embedder, *gateway, question, kk, ann || cfg.use_ann, prompts.answer);
    std::cout << result.answer << "\n";
    return 0;
}

int run_compare(const CommonOptions& common, const std::string& corpus, const std::string& queries,
                const std::string& report_dir, bool generate) {
    auto cfg = resolve_config(common);
    if (!corpus.empty())
        cfg.corpus = corpus;
    if (!queries.empty())
        cfg.queries = queries;
    if (!report_dir.empty())
        cfg.report_dir = report_dir;
    if (generate)
        cfg.generate_answers = true;
    if (cfg.corpus.empty() || cfg.queries.empty() || cfg.report_dir.empty())
        throw chop::UsageError("compare needs corpus, queries and report_dir");

    auto docs = chop::load_corpus(cfg.corpus);
    auto qs = chop::load_queries(cfg.queries);
    auto embedder = chop::make_embedder(cfg);
    auto gateway = chop::make_gateway(cfg);
    auto prompts = chop::PromptSet::from_config(cfg);

    auto result = chop::compare_strategies(docs, qs, cfg, *embedder, gateway.get(), prompts);
    chop::write_reports(result.report, cfg.report_dir);
    for (std::size_t i = 0; i < result.manifests.size(); ++i) {
        if (!result.manifests[i])
            continue;
        auto name = "manifest_" + chop::to_string(chop::all_strategies[i]) + ".json";
        chop::write_file_atomic(fs::path(cfg.report_dir) / name, result.manifests[i]->to_json().dump(2) + "\n");
    }
    chop::write_table(std::cout, result.report);
    bool any_failed = false;
    for (const auto& r : result.report.rows)
        any_failed = any_failed || r.error.has_value();
    return any_failed ? 2 : 0;
}

int run_inspect(const std::string& index) {
    auto loaded = chop::VectorStore::load(index);
    const auto& s = loaded.store;
    nlohmann::json j{{"path", index},
                     {"dimension", s.dimension()},
                     {"embedder", s.embedder_descriptor()},
                     {"count", s.size()},
                     {"attributes", s.attributes()},
                     {"ann", s.has_ann()},
                     {"checksum", s.checksum()}};
    if (s.has_ann())
        j["hnsw"] = {{"m", s.ann()->params().m},
                     {"ef_construction", s.ann()->params().ef_construction},
                     {"ef_search", s.ann()->params().ef_search},
                     {"max_level", s.ann()->max_level()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"chunkwise context-preserving ingestion, retrieval and evaluation"};
    app.require_subcommand(1);
    CommonOptions common;

    auto* ingest = app.add_subcommand("ingest", "Chunk, annotate, embed and index a corpus");
    add_common(ingest, common);
    std::string strategy, corpus, index, manifest, audit_log;
    bool ann = false;
    ingest->add_option("--strategy", strategy, "CHOP | NAIVE_500T | COSINE_CHUNKING");
    ingest->add_option("--corpus", corpus, "Line-delimited JSON corpus");
    ingest->add_option("--index", index, "Output index file");
    ingest->add_flag("--ann", ann, "Also build the HNSW graph");
    ingest->add_option("--manifest", manifest, "Manifest path (default: <index>.manifest.json)");
    ingest->add_option("--audit-log", audit_log, "Continuity decision log (CHOP)");

    auto* query = app.add_subcommand("query", "Search an index with a free-text query");
    add_common(query, common);
    std::size_t k = 5, snippet_chars = 160;
    bool q_ann = false, q_exact = false;
    std::string text, export_path;
    query->add_option("--index", index, "Index file");
    query->add_option("--k", k, "Number of hits");
    auto* ann_flag = query->add_flag("--ann", q_ann, "Use the HNSW graph");
    query->add_flag("--exact", q_exact, "Exhaustive search (default)")->excludes(ann_flag);
    query->add_option("--export", export_path, "Write hits as line-delimited JSON");
    query->add_option("--snippet", snippet_chars, "Characters of text to show per hit");
    query->add_option("text", text, "Query text")->required();

    auto* generate = app.add_subcommand("generate", "Answer a question from retrieved evidence");
    add_common(generate, common);
    std::optional<std::size_t> gen_k;
    std::string question, queries_path, query_id;
    bool g_ann = false;
    generate->add_option("--index", index, "Index file");
    generate->add_option("--k", gen_k, "Evidence blocks (default: generate_k)");
    generate->add_option("--question", question, "Question text");
    generate->add_option("--queries", queries_path, "Query file to take the question from");
    generate->add_option("--query-id", query_id, "Query id within --queries");
    generate->add_flag("--ann", g_ann, "Use the HNSW graph");

    auto* compare = app.add_subcommand("compare", "Evaluate CHOP against both baselines");
    add_common(compare, common);
    std::string report_dir, queries;
    bool gen_answers = false;
    compare->add_option("--corpus", corpus, "Line-delimited JSON corpus");
    compare->add_option("--queries", queries, "Query file with gold spans");
    compare->add_option("--report-dir", report_dir, "Directory for report.csv / report.txt");
    compare->add_flag("--generate", gen_answers, "Also generate answers and score them");

    auto* inspect = app.add_subcommand("inspect", "Print index metadata");
    std::string inspect_index;
    inspect->add_option("index", inspect_index, "Index file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        auto code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    spdlog::set_level(common.verbose ? spdlog::level::debug : spdlog::level::warn);
    spdlog::set_pattern("[%l] %v");

    try {
        if (*ingest)
            return run_ingest(common, strategy, corpus, index, ann, manifest, audit_log);
        if (*query)
            return run_query(common, index, k, q_ann, q_exact, text, export_path, snippet_chars);
        if (*generate)
            return run_generate(common, index, gen_k, question, queries_path, query_id, g_ann);
        if (*compare)
            return run_compare(common, corpus, queries, report_dir, gen_answers);
        if (*inspect)
            return run_inspect(inspect_index);
    } catch (const chop::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
