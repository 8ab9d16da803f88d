#pragma once

#include <chop/corpus.hpp>
#include <chop/embedding.hpp>
#include <chop/error.hpp>
#include <chop/text.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace chop {

struct GoldSpan {
    std::string doc_id;
    Span span;
};

struct QueryRecord {
    std::string query_id;
    std::string text;
    std::vector<GoldSpan> gold;
    std::optional<std::string> reference_answer;
};

/// Query file: one JSON object per line,
/// {query_id, text, gold: [{doc_id, start, end}], reference_answer?}.
inline std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("query file not found: " + path.string());
    std::vector<QueryRecord> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty())
            continue;
        auto where = path.string() + ":" + std::to_string(lineno);
        try {
            auto j = nlohmann::json::parse(line);
            QueryRecord q;
            q.query_id = j.at("query_id").get<std::string>();
            q.text = j.at("text").get<std::string>();
            for (const auto& g : j.value("gold", nlohmann::json::array())) {
                GoldSpan s{g.at("doc_id").get<std::string>(),
                           {g.at("start").get<std::size_t>(), g.at("end").get<std::size_t>()}};
                if (s.span.end <= s.span.begin)
                    throw DataError(where + ": gold span must have start < end");
                q.gold.push_back(std::move(s));
            }
            if (auto it = j.find("reference_answer"); it != j.end() && !it->is_null())
                q.reference_answer = it->get<std::string>();
            if (!seen.insert(q.query_id).second)
                throw DataError(where + ": duplicate query_id '" + q.query_id + "'");
            out.push_back(std::move(q));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": malformed query record: " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Retrieval metrics

inline constexpr double default_min_overlap = 0.5;

/// A retrieved chunk resolved to original-record coordinates.
struct RetrievedChunk {
    std::string id;
    double score = 0.0;
    std::vector<SourceRef> sources;
};

struct RetrievalRun {
    std::string strategy;
    std::size_t k = 10; ///< hits kept per query
    std::unordered_map<std::string, std::vector<RetrievedChunk>> hits;
};

/// Fraction of `gold` covered by the chunk's source regions.
inline double coverage(const std::vector<SourceRef>& chunk, const GoldSpan& gold) {
    if (gold.span.empty())
        return 0.0;
    std::size_t covered = 0;
    for (const auto& s : chunk)
        if (s.doc_id == gold.doc_id)
            covered += overlap(s.span, gold.span);
    return static_cast<double>(covered) / static_cast<double>(gold.span.length());
}

/// True iff the chunk covers at least `min_overlap` of some gold span.
inline bool is_relevant(const std::vector<SourceRef>& chunk, const std::vector<GoldSpan>& gold,
                        double min_overlap = default_min_overlap) {
    return std::any_of(gold.begin(), gold.end(), [&](const GoldSpan& g) { return coverage(chunk, g) >= min_overlap; });
}

namespace detail {

inline const std::vector<RetrievedChunk>& hits_for(const RetrievalRun& run, const QueryRecord& q, std::size_t k) {
    auto it = run.hits.find(q.query_id);
    if (it == run.hits.end())
        throw DataError("run '" + run.strategy + "' has no results for query '" + q.query_id + "'");
    if (k < 1 || k > run.k)
        throw UsageError("k=" + std::to_string(k) + " outside 1.." + std::to_string(run.k));
    return it->second;
}

} // namespace detail

/// 1-based rank of the first relevant hit within the top k, or 0.
inline std::size_t first_relevant_rank(const std::vector<RetrievedChunk>& hits, const std::vector<GoldSpan>& gold,
                                       std::size_t k, double min_overlap = default_min_overlap) {
    for (std::size_t i = 0; i < std::min(k, hits.size()); ++i)
        if (is_relevant(hits[i].sources, gold, min_overlap))
            return i + 1;
    return 0;
}

/// Binary gains for the top k. A hit earns a gain only for a gold span not
/// already credited to a higher-ranked hit, so overlapping chunks covering the
/// same evidence count once and DCG never exceeds IDCG.
inline std::vector<int> credited_gains(const std::vector<RetrievedChunk>& hits, const std::vector<GoldSpan>& gold,
                                       std::size_t k, double min_overlap = default_min_overlap) {
    std::vector<int> gains;
    std::vector<bool> credited(gold.size(), false);
    for (std::size_t i = 0; i < std::min(k, hits.size()); ++i) {
        int gain = 0;
        for (std::size_t g = 0; g < gold.size(); ++g) {
            if (!credited[g] && coverage(hits[i].sources, gold[g]) >= min_overlap) {
                credited[g] = true;
                gain = 1;
                break;
            }
        }
        gains.push_back(gain);
    }
    return gains;
}

inline double hit_at_k(const RetrievalRun& run, const QueryRecord& q, std::size_t k,
                       double min_overlap = default_min_overlap) {
    return first_relevant_rank(detail::hits_for(run, q, k), q.gold, k, min_overlap) > 0 ? 1.0 : 0.0;
}

inline double mrr_at_k(const RetrievalRun& run, const QueryRecord& q, std::size_t k,
                       double min_overlap = default_min_overlap) {
    auto r = first_relevant_rank(detail::hits_for(run, q, k), q.gold, k, min_overlap);
    return r == 0 ? 0.0 : 1.0 / static_cast<double>(r);
}

inline double ndcg_at_k(const RetrievalRun& run, const QueryRecord& q, std::size_t k,
                        double min_overlap = default_min_overlap) {
    const auto& hits = detail::hits_for(run, q, k);
    if (q.gold.empty())
        throw DataError("query '" + q.query_id + "' has no gold spans");
    auto gains = credited_gains(hits, q.gold, k, min_overlap);
    double dcg = 0.0;
    for (std::size_t i = 0; i < gains.size(); ++i)
        dcg += gains[i] / std::log2(static_cast<double>(i) + 2.0);
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, q.gold.size()); ++i)
        idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    return dcg / idcg;
}

// ---------------------------------------------------------------------------
// Answer metrics

/// Lowercase, drop ASCII punctuation, split on whitespace.
inline std::vector<std::string> answer_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        auto u = static_cast<unsigned char>(c);
        if (text::is_space(c)) {
            if (!cur.empty())
                out.push_back(std::move(cur));
            cur.clear();
        } else if (u < 0x80 && std::ispunct(u)) {
            continue;
        } else {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    if (!cur.empty())
        out.push_back(std::move(cur));
    return out;
}

/// Multiset token overlap F1. Both empty -> 1; one empty -> 0.
inline double token_f1(std::string_view prediction, std::string_view reference) {
    auto p = answer_tokens(prediction);
    auto r = answer_tokens(reference);
    if (p.empty() && r.empty())
        return 1.0;
    if (p.empty() || r.empty())
        return 0.0;
    std::map<std::string, long> counts;
    for (const auto& t : r)
        ++counts[t];
    long common = 0;
    for (const auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    // 2PR/(P+R) with P = c/|p|, R = c/|r|
    return 2.0 * static_cast<double>(common) / static_cast<double>(p.size() + r.size());
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// ROUGE-L F-measure (beta = 1). Both empty -> 1; one empty -> 0.
inline double rouge_l(std::string_view prediction, std::string_view reference) {
    auto p = answer_tokens(prediction);
    auto r = answer_tokens(reference);
    if (p.empty() && r.empty())
        return 1.0;
    if (p.empty() || r.empty())
        return 0.0;
    auto lcs = lcs_length(p, r);
    return 2.0 * static_cast<double>(lcs) / static_cast<double>(p.size() + r.size());
}

struct SemScore {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

/// Greedy token matching under an embedder: each prediction token takes its
/// best cosine against the reference tokens (precision side) and vice versa
/// (recall side). This approximates BERTScore with whatever embedder is
/// configured; it is not the pretrained-transformer metric.
inline SemScore sem_score(std::string_view prediction, std::string_view reference, const Embedder& embedder) {
    auto p = answer_tokens(prediction);
    auto r = answer_tokens(reference);
    if (p.empty() && r.empty())
        return {1.0, 1.0, 1.0};
    if (p.empty() || r.empty())
        return {};

    std::vector<std::string> vocab;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto* side : {&p, &r})
        for (const auto& t : *side)
            if (slot.emplace(t, vocab.size()).second)
                vocab.push_back(t);
    auto vectors = embedder.embed_batch(vocab);

    auto best_mean = [&](const std::vector<std::string>& from, const std::vector<std::string>& to) {
        double sum = 0.0;
        for (const auto& a : from) {
            double best = -1.0;
            for (const auto& b : to)
                best = std::max(best, cosine(vectors[slot[a]], vectors[slot[b]]));
            sum += std::clamp(best, 0.0, 1.0);
        }
        return sum / static_cast<double>(from.size());
    };
    SemScore s;
    s.precision = best_mean(p, r);
    s.recall = best_mean(r, p);
    s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    s.f = std::clamp(s.f, 0.0, 1.0);
    return s;
}

// ---------------------------------------------------------------------------
// Aggregation and reports

inline double mean(const std::vector<double>& values) {
    if (values.empty())
        throw DataError("cannot aggregate an empty query set");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

struct MetricRow {
    std::string strategy;
    std::size_t k = 0;
    double hit_rate = 0.0;
    double mrr = 0.0;
    double ndcg = 0.0;
    std::optional<double> f1;
    std::optional<double> rouge_l;
    std::optional<double> sem_score;
    std::optional<std::string> error; ///< set when the strategy failed
};

struct MetricReport {
    std::size_t query_count = 0;
    std::vector<MetricRow> rows;
    std::vector<std::string> notes;
};

/// Per-query values for one strategy at one k.
struct QueryScores {
    std::vector<double> hit, mrr, ndcg, f1, rouge_l, sem;
};

inline MetricRow aggregate(const std::string& strategy, std::size_t k, const QueryScores& s) {
    MetricRow row;
    row.strategy = strategy;
    row.k = k;
    row.hit_rate = mean(s.hit);
    row.mrr = mean(s.mrr);
    row.ndcg = mean(s.ndcg);
    if (!s.f1.empty())
        row.f1 = mean(s.f1);
    if (!s.rouge_l.empty())
        row.rouge_l = mean(s.rouge_l);
    if (!s.sem.empty())
        row.sem_score = mean(s.sem);
    return row;
}

inline const char* report_columns[] = {"strategy", "K", "hit_rate", "mrr", "ndcg", "f1", "rouge_l", "sem_score"};

namespace detail {

inline std::string fmt_metric(double v, int decimals) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::vector<std::string> row_cells(const MetricRow& r, int decimals) {
    if (r.error)
        return {r.strategy, std::to_string(r.k), "ERROR", "ERROR", "ERROR", "ERROR", "ERROR", "ERROR"};
    auto opt = [&](const std::optional<double>& v) { return v ? fmt_metric(*v, decimals) : std::string("NA"); };
    return {r.strategy,
            std::to_string(r.k),
            fmt_metric(r.hit_rate, decimals),
            fmt_metric(r.mrr, decimals),
            fmt_metric(r.ndcg, decimals),
            opt(r.f1),
            opt(r.rouge_l),
            opt(r.sem_score)};
}

} // namespace detail

inline void write_csv(std::ostream& out, const MetricReport& report) {
    for (std::size_t i = 0; i < std::size(report_columns); ++i)
        out << (i ? "," : "") << report_columns[i];
    out << '\n';
    for (const auto& r : report.rows) {
        auto cells = detail::row_cells(r, 6);
        for (std::size_t i = 0; i < cells.size(); ++i)
            out << (i ? "," : "") << cells[i];
        out << '\n';
    }
}

/// Fixed-width table with the same columns, followed by notes and failures.
inline void write_table(std::ostream& out, const MetricReport& report) {
    std::vector<std::vector<std::string>> lines;
    lines.emplace_back(std::begin(report_columns), std::end(report_columns));
    for (const auto& r : report.rows)
        lines.push_back(detail::row_cells(r, 4));
    std::vector<std::size_t> width(lines.front().size(), 0);
    for (const auto& l : lines)
        for (std::size_t i = 0; i < l.size(); ++i)
            width[i] = std::max(width[i], l[i].size());
    for (std::size_t n = 0; n < lines.size(); ++n) {
        std::string row;
        for (std::size_t i = 0; i < lines[n].size(); ++i) {
            if (i)
                row += "  ";
            auto pad = width[i] - lines[n][i].size();
            if (i == 0)
                row += lines[n][i] + std::string(pad, ' ');
            else
                row += std::string(pad, ' ') + lines[n][i];
        }
        while (!row.empty() && row.back() == ' ')
            row.pop_back();
        out << row << '\n';
        if (n == 0) {
            std::size_t total = 0;
            for (auto w : width)
                total += w;
            out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        }
    }
    out << "queries: " << report.query_count << '\n';
    for (const auto& note : report.notes)
        out << "note: " << note << '\n';
    std::set<std::string> failed;
    for (const auto& r : report.rows)
        if (r.error && failed.insert(r.strategy).second)
            out << "failed: " << r.strategy << ": " << *r.error << '\n';
}

} // namespace chop
