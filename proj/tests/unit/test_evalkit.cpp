#include <catch2/catch_amalgamated.hpp>

#include "support/synthetic.hpp"

#include <chop/evalkit.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace chop;

namespace {

RetrievedChunk hit(std::string id, std::string doc, Span span) { return {std::move(id), 0.0, {{std::move(doc), span}}}; }

RetrievedChunk miss(std::string id) { return hit(std::move(id), "elsewhere", {0, 1}); }

RetrievalRun run_of(std::vector<RetrievedChunk> hits, std::size_t k = 10) {
    RetrievalRun r;
    r.strategy = "S";
    r.k = k;
    r.hits["q"] = std::move(hits);
    return r;
}

QueryRecord query(std::vector<GoldSpan> gold) { return {"q", "question", std::move(gold), std::nullopt}; }

} // namespace

TEST_CASE("relevance is gold-span coverage", "[evalkit]") {
    GoldSpan g{"d", {100, 200}};
    CHECK(coverage({{"d", {150, 400}}}, g) == 0.5);
    CHECK(coverage({{"d", {0, 120}}, {"d", {170, 300}}}, g) == 0.5);
    CHECK(coverage({{"e", {100, 200}}}, g) == 0.0);
    CHECK(is_relevant({{"d", {150, 400}}}, {g}));
    CHECK_FALSE(is_relevant({{"d", {151, 400}}}, {g}));
    CHECK(is_relevant({{"d", {151, 400}}}, {g}, 0.4));
}

TEST_CASE("retrieval metric worked examples", "[evalkit]") {
    auto q = query({{"d", {0, 10}}});
    SECTION("relevant at rank 2") {
        auto run = run_of({miss("a"), hit("b", "d", {0, 10}), miss("c")});
        CHECK(hit_at_k(run, q, 1) == 0.0);
        CHECK(hit_at_k(run, q, 3) == 1.0);
        CHECK(mrr_at_k(run, q, 3) == 0.5);
        CHECK(mrr_at_k(run, q, 1) == 0.0);
    }
    SECTION("relevant at rank 3, k = 3") {
        auto run = run_of({miss("a"), miss("b"), hit("c", "d", {0, 10})});
        CHECK(ndcg_at_k(run, q, 3) == 0.5);
    }
    SECTION("two gold spans, both found") {
        auto q2 = query({{"d", {0, 10}}, {"d", {50, 60}}});
        auto run = run_of({hit("a", "d", {50, 60}), miss("b"), hit("c", "d", {0, 10})});
        double want = (1.0 + 0.5) / (1.0 + 1.0 / std::log2(3.0));
        CHECK(ndcg_at_k(run, q2, 3) == Catch::Approx(want).epsilon(1e-15));
        CHECK(ndcg_at_k(run, q2, 1) == 1.0);
    }
    SECTION("duplicate evidence is credited once") {
        auto run = run_of({hit("a", "d", {0, 10}), hit("b", "d", {0, 10})});
        CHECK(ndcg_at_k(run, q, 2) == 1.0);
        CHECK(credited_gains(run.hits["q"], q.gold, 2) == std::vector<int>{1, 0});
    }
    SECTION("guards") {
        auto run = run_of({miss("a")}, 3);
        CHECK_THROWS_AS(hit_at_k(run, q, 0), UsageError);
        CHECK_THROWS_AS(hit_at_k(run, q, 4), UsageError);
        CHECK_THROWS_AS(hit_at_k(run, query({}), 1) + ndcg_at_k(run, query({}), 1), DataError);
        auto other = q;
        other.query_id = "unknown";
        CHECK_THROWS_AS(mrr_at_k(run, other, 1), DataError);
    }
}

TEST_CASE("retrieval metric properties", "[evalkit][property]") {
    std::mt19937_64 rng(21);
    auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<GoldSpan> gold;
        for (std::size_t g = uni(1, 4); g-- > 0;) {
            auto b = uni(0, 80);
            gold.push_back({"d", {b, b + uni(1, 20)}});
        }
        std::vector<RetrievedChunk> hits;
        for (std::size_t h = 0; h < 10; ++h) {
            if (uni(0, 2) == 0)
                hits.push_back(hit("h" + std::to_string(h), "d", gold[uni(0, gold.size() - 1)].span));
            else
                hits.push_back(miss("h" + std::to_string(h)));
        }
        auto run = run_of(hits);
        auto q = query(gold);
        double prev_hit = 0, prev_mrr = 0;
        for (std::size_t k = 1; k <= 10; ++k) {
            auto h = hit_at_k(run, q, k), m = mrr_at_k(run, q, k), n = ndcg_at_k(run, q, k);
            CHECK(h >= prev_hit); // monotone in k
            CHECK(m >= prev_mrr);
            CHECK((m >= 0.0 && m <= h));
            CHECK((n >= 0.0 && n <= 1.0 + 1e-12));
            prev_hit = h;
            prev_mrr = m;
        }
        CHECK(mrr_at_k(run, q, 1) == hit_at_k(run, q, 1));
    }
}

TEST_CASE("token_f1 and rouge_l spot values", "[evalkit]") {
    CHECK(token_f1("the air filter", "air filter") == 0.8);
    CHECK(rouge_l("a c", "a b c") == 0.8);
    CHECK(token_f1("Air filter!", "air, filter") == 1.0);
    CHECK(rouge_l("x y z", "x y z") == 1.0);
    CHECK(token_f1("", "") == 1.0);
    CHECK(rouge_l("", "") == 1.0);
    CHECK(token_f1("", "air") == 0.0);
    CHECK(rouge_l("air", "") == 0.0);
    CHECK(token_f1("a a b", "a b b") == Catch::Approx(2.0 / 3.0));
    CHECK(answer_tokens("Don't PANIC, it's 5.5") == std::vector<std::string>{"dont", "panic", "its", "55"});
}

TEST_CASE("answer metrics are symmetric and bounded", "[evalkit][property]") {
    std::mt19937_64 rng(4);
    const std::vector<std::string> vocab{"air", "filter", "pump", "belt", "the", "a", "replace", "check"};
    auto sentence = [&] {
        std::string s;
        for (auto n = std::uniform_int_distribution<int>(0, 7)(rng); n-- > 0;)
            s += vocab[std::uniform_int_distribution<std::size_t>(0, vocab.size() - 1)(rng)] + " ";
        return s;
    };
    for (int i = 0; i < 300; ++i) {
        auto a = sentence(), b = sentence();
        CHECK(token_f1(a, b) == token_f1(b, a));
        CHECK(rouge_l(a, b) == rouge_l(b, a));
        CHECK(rouge_l(a, b) <= token_f1(a, b) + 1e-12);
        CHECK((token_f1(a, b) >= 0.0 && token_f1(a, b) <= 1.0));
    }
}

TEST_CASE("sem_score under the hash embedder", "[evalkit]") {
    HashEmbedder emb(512, 42);
    auto same = sem_score("replace the air filter", "replace the air filter", emb);
    CHECK(same.f == Catch::Approx(1.0));
    auto partial = sem_score("replace the filter", "replace the air filter", emb);
    CHECK(partial.precision == Catch::Approx(1.0));
    CHECK(partial.recall < 1.0);
    CHECK((partial.f > 0.0 && partial.f < 1.0));
    CHECK(sem_score("", "x", emb).f == 0.0);
    CHECK(sem_score("", "", emb).f == 1.0);
}

TEST_CASE("aggregation and report layout", "[evalkit][report]") {
    QueryScores s{{1, 0}, {1, 0}, {1, 0.5}, {}, {}, {}};
    auto row = aggregate("CHOP", 1, s);
    CHECK(row.hit_rate == 0.5);
    CHECK(row.ndcg == 0.75);
    CHECK_FALSE(row.f1);
    CHECK_THROWS_AS(mean({}), DataError);

    MetricReport report;
    report.query_count = 2;
    report.rows.push_back(row);
    MetricRow failed;
    failed.strategy = "NAIVE_500T";
    failed.k = 1;
    failed.error = "stage embed [d]: boom";
    report.rows.push_back(failed);
    report.notes.push_back("mrr: misses count as 0");

    std::ostringstream csv;
    write_csv(csv, report);
    CHECK(csv.str() == "strategy,K,hit_rate,mrr,ndcg,f1,rouge_l,sem_score\n"
                       "CHOP,1,0.500000,0.500000,0.750000,NA,NA,NA\n"
                       "NAIVE_500T,1,ERROR,ERROR,ERROR,ERROR,ERROR,ERROR\n");

    std::ostringstream table;
    write_table(table, report);
    CHECK(table.str() == "strategy    K  hit_rate     mrr    ndcg     f1  rouge_l  sem_score\n"
                         "------------------------------------------------------------------\n"
                         "CHOP        1    0.5000  0.5000  0.7500     NA       NA         NA\n"
                         "NAIVE_500T  1     ERROR   ERROR   ERROR  ERROR    ERROR      ERROR\n"
                         "queries: 2\n"
                         "note: mrr: misses count as 0\n"
                         "failed: NAIVE_500T: stage embed [d]: boom\n");
}

TEST_CASE("load_queries", "[evalkit]") {
    auto dir = testing::scratch_dir("queries");
    std::ofstream(dir / "q.jsonl")
        << R"({"query_id":"q1","text":"KX200 filter","gold":[{"doc_id":"m","start":3,"end":9}],"reference_answer":"x"})"
        << "\n"
        << R"({"query_id":"q2","text":"no gold"})" << "\n";
    auto qs = load_queries(dir / "q.jsonl");
    REQUIRE(qs.size() == 2);
    CHECK(qs[0].gold[0].span == Span{3, 9});
    CHECK(qs[0].reference_answer == "x");
    CHECK(qs[1].gold.empty());

    std::ofstream(dir / "bad.jsonl") << R"({"query_id":"q","text":"t","gold":[{"doc_id":"m","start":9,"end":3}]})"
                                     << "\n";
    CHECK_THROWS_AS(load_queries(dir / "bad.jsonl"), DataError);
    std::ofstream(dir / "dup.jsonl") << R"({"query_id":"q","text":"t"})" << "\n" << R"({"query_id":"q","text":"u"})"
                                     << "\n";
    CHECK_THROWS_AS(load_queries(dir / "dup.jsonl"), DataError);
}
