#include <catch2/catch_amalgamated.hpp>

#include "support/synthetic.hpp"

#include <chop/vecstore.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace chop;

namespace {

EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> g;
    EmbeddingVector v{std::vector<double>(dim)};
    for (auto& x : v.values)
        x = g(rng);
    normalize(v);
    return v;
}

IndexedChunk item(std::string id, EmbeddingVector v) {
    IndexedChunk c;
    c.id = id;
    c.x_text = "text of " + id;
    c.vector = std::move(v);
    c.metadata.doc_id = "doc";
    c.metadata.strategy = "NAIVE_500T";
    c.metadata.char_span = {0, 10};
    c.metadata.sources = {{"doc", {0, 10}}};
    return c;
}

VectorStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    VectorStore s(dim, "test:dim=" + std::to_string(dim));
    for (std::size_t i = 0; i < n; ++i)
        s.insert(item("c" + std::to_string(i), random_unit(rng, dim)));
    return s;
}

} // namespace

TEST_CASE("insert guards", "[vecstore]") {
    VectorStore s(3, "test");
    CHECK_THROWS_AS(VectorStore(0, "x"), UsageError);
    CHECK_THROWS_AS(s.insert(item("a", EmbeddingVector{{1, 0}})), DataError);
    CHECK_THROWS_AS(s.insert(item("a", EmbeddingVector{{NAN, 0, 0}})), DataError);
    s.insert(item("a", EmbeddingVector{{1, 0, 0}}));
    CHECK_THROWS_AS(s.insert(item("a", EmbeddingVector{{0, 1, 0}})), DataError);
    CHECK(s.size() == 1);
    CHECK(s.get("a"));
    CHECK_FALSE(s.get("b"));
}

TEST_CASE("search guards", "[vecstore]") {
    VectorStore empty(3, "test");
    CHECK_THROWS_AS(empty.search_exact(EmbeddingVector{{1, 0, 0}}, 1), DataError);
    auto s = random_store(5, 3, 1);
    CHECK_THROWS_AS(s.search_exact(EmbeddingVector{{1, 0, 0}}, 0), UsageError);
    CHECK_THROWS_AS(s.search_exact(EmbeddingVector{{1, 0}}, 1), DataError);
    CHECK_THROWS_AS(s.search_ann(EmbeddingVector{{1, 0, 0}}, 1), UsageError);
    CHECK(s.search_exact(EmbeddingVector{{1, 0, 0}}, 50).size() == 5);
}

TEST_CASE("exact search equals a full sort", "[vecstore][property]") {
    std::mt19937_64 rng(8);
    for (std::size_t n : {1, 7, 100, 1000}) {
        auto s = random_store(n, 16, n);
        for (int q = 0; q < 5; ++q) {
            auto query = random_unit(rng, 16);
            std::vector<std::pair<double, std::size_t>> all;
            for (std::size_t i = 0; i < n; ++i)
                all.push_back({cosine(query, s.at(i).vector), i});
            std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first; });
            auto k = std::min<std::size_t>(10, n);
            auto hits = s.search_exact(query, k);
            REQUIRE(hits.size() == k);
            for (std::size_t r = 0; r < k; ++r) {
                CHECK(hits[r].position == all[r].second);
                CHECK(hits[r].rank == r + 1);
                CHECK(hits[r].score == Catch::Approx(all[r].first).margin(1e-12));
            }
        }
    }
}

TEST_CASE("ties keep insertion order", "[vecstore]") {
    VectorStore s(2, "test");
    s.insert(item("x", EmbeddingVector{{0, 1}}));
    s.insert(item("first", EmbeddingVector{{1, 0}}));
    s.insert(item("second", EmbeddingVector{{1, 0}}));
    auto hits = s.search_exact(EmbeddingVector{{1, 0}}, 2);
    CHECK(hits[0].id == "first");
    CHECK(hits[1].id == "second");
    CHECK(hits[0].score == 1.0);
}

TEST_CASE("ANN search on a small store finds the exact neighbors", "[vecstore][hnsw]") {
    auto s = random_store(300, 16, 4);
    s.build_ann({8, 100, 100, 42});
    std::mt19937_64 rng(9);
    double recall = 0;
    for (int q = 0; q < 20; ++q) {
        auto query = random_unit(rng, 16);
        auto exact = s.search_exact(query, 5);
        auto approx = s.search_ann(query, 5);
        REQUIRE(approx.size() == 5);
        for (const auto& a : approx)
            recall += std::any_of(exact.begin(), exact.end(), [&](auto& e) { return e.id == a.id; }) ? 1 : 0;
        for (std::size_t r = 1; r < approx.size(); ++r)
            CHECK(approx[r - 1].score >= approx[r].score);
    }
    CHECK(recall / 100.0 >= 0.95);

    // items inserted after the build are indexed too
    s.insert(item("late", s.at(0).vector));
    auto hits = s.search_ann(s.at(0).vector, 2);
    CHECK(((hits[0].id == "late" || hits[0].id == "c0") && (hits[1].id == "late" || hits[1].id == "c0")));
}

TEST_CASE("hnsw rejects bad parameters and out-of-order ids", "[hnsw]") {
    CHECK_THROWS_AS(HnswIndex({1, 10, 10, 1}), UsageError);
    CHECK_THROWS_AS(HnswIndex({4, 0, 10, 1}), UsageError);
    HnswIndex h;
    std::vector<double> v{1, 0};
    CHECK_THROWS_AS(h.insert(3, [&](HnswIndex::Id) { return std::span<const double>(v); }), UsageError);
}

TEST_CASE("persist and load round trip", "[vecstore][persistence]") {
    auto dir = testing::scratch_dir("vecstore");
    auto s = random_store(50, 8, 12);
    s.attributes() = {{"strategy", "CHOP"}, {"prefix_format", "pfx-v1"}};
    s.build_ann({6, 40, 30, 7});
    s.persist(dir / "s.idx");

    auto loaded = VectorStore::load(dir / "s.idx", s.embedder_descriptor());
    const auto& t = loaded.store;
    CHECK(loaded.warnings.empty());
    CHECK(t.size() == s.size());
    CHECK(t.checksum() == s.checksum());
    CHECK(t.attributes() == s.attributes());
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(t.at(i).id == s.at(i).id);
        CHECK(t.at(i).x_text == s.at(i).x_text);
        CHECK(t.at(i).vector == s.at(i).vector);
        CHECK(t.at(i).metadata == s.at(i).metadata);
    }
    REQUIRE(t.has_ann());
    CHECK(t.ann()->links() == s.ann()->links());
    auto q = s.at(3).vector;
    auto a = s.search_ann(q, 5), b = t.search_ann(q, 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(a[i].id == b[i].id);
}

TEST_CASE("metadata with a CNM survives persistence", "[vecstore][persistence]") {
    auto dir = testing::scratch_dir("vecstore-cnm");
    VectorStore s(2, "test");
    auto it = item("c", EmbeddingVector{{1, 0}});
    it.metadata.cnm = CNM{"camera", {"camera lens"}, "X-SERIES", 0.5};
    it.metadata.cnm_origin = "INHERITED";
    it.metadata.prefix_length = 42;
    s.insert(it);
    s.persist(dir / "s.idx");
    CHECK(VectorStore::load(dir / "s.idx").store.at(0).metadata == it.metadata);
}

TEST_CASE("corrupt or truncated files fail the checksum", "[vecstore][persistence]") {
    auto dir = testing::scratch_dir("vecstore-corrupt");
    auto s = random_store(10, 4, 3);
    s.persist(dir / "s.idx");
    std::string raw;
    {
        std::ifstream in(dir / "s.idx", std::ios::binary);
        raw.assign(std::istreambuf_iterator<char>(in), {});
    }

    std::ofstream(dir / "short.idx", std::ios::binary) << raw.substr(0, raw.size() - 5);
    CHECK_THROWS_AS(VectorStore::load(dir / "short.idx"), DataError);

    auto flipped = raw;
    flipped[flipped.size() - 3] ^= 0x5A;
    std::ofstream(dir / "flip.idx", std::ios::binary) << flipped;
    CHECK_THROWS_WITH(VectorStore::load(dir / "flip.idx"), Catch::Matchers::ContainsSubstring("checksum"));

    std::ofstream(dir / "junk.idx", std::ios::binary) << "not a store at all";
    CHECK_THROWS_AS(VectorStore::load(dir / "junk.idx"), DataError);
    CHECK_THROWS_AS(VectorStore::load(dir / "absent.idx"), DataError);
}

TEST_CASE("loading with a different embedder warns", "[vecstore][persistence]") {
    auto dir = testing::scratch_dir("vecstore-warn");
    random_store(3, 4, 1).persist(dir / "s.idx");
    auto loaded = VectorStore::load(dir / "s.idx", std::string("hash-v1:dim=4:seed=1"));
    REQUIRE(loaded.warnings.size() == 1);
    CHECK(loaded.warnings[0].find("test:dim=4") != std::string::npos);
}

TEST_CASE("hits export as JSON lines", "[vecstore]") {
    std::ostringstream out;
    write_hits_jsonl(out, "q1", {{"a", 0.5, 1, 0}, {"b", 0.25, 2, 1}});
    CHECK(out.str() == "{\"id\":\"a\",\"query_id\":\"q1\",\"rank\":1,\"score\":0.5}\n"
                       "{\"id\":\"b\",\"query_id\":\"q1\",\"rank\":2,\"score\":0.25}\n");
}
