#include <catch2/catch_amalgamated.hpp>

#include <chop/continuity.hpp>

#include <random>
#include <sstream>

using namespace chop;

namespace {

std::vector<Chunk> chunks_of(std::size_t n, const std::string& doc = "d") {
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < n; ++i) {
        Chunk c;
        c.doc_id = doc;
        c.seq_index = i;
        c.chunk_id = make_chunk_id(doc, i);
        c.text = "chunk " + std::to_string(i) + " of " + doc;
        out.push_back(c);
    }
    return out;
}

/// A decider that replays a fixed decision sequence.
DeciderFn scripted_decider(const std::vector<bool>& same) {
    return [same](const Chunk& prev, const Chunk& cur) {
        ContinuityDecision d;
        d.same = same.at(cur.seq_index);
        d.pair = {prev.chunk_id, cur.chunk_id};
        return d;
    };
}

CnmExtractorFn counting_extractor(int& calls) {
    return [&calls](const Chunk& c) {
        ++calls;
        return CNM{std::nullopt, {"noun" + std::to_string(c.seq_index)}, std::nullopt, 1.0};
    };
}

} // namespace

TEST_CASE("parse_cd_response accepted forms", "[continuity]") {
    CHECK(parse_cd_response(R"({"same": true})") == true);
    CHECK(parse_cd_response(R"({"same": false})") == false);
    CHECK(parse_cd_response("```json\n{\"same\": false}\n```") == false);
    CHECK(parse_cd_response(" TRUE ") == true);
    CHECK(parse_cd_response("false") == false);
    CHECK(parse_cd_response(R"({"same": "false"})") == false);
    CHECK_FALSE(parse_cd_response("maybe"));
    CHECK_FALSE(parse_cd_response(R"({"same": 1})"));
    CHECK_FALSE(parse_cd_response(R"({"other": true})"));
    CHECK_FALSE(parse_cd_response(""));
}

TEST_CASE("anchor and current text are capped at 600 characters", "[continuity]") {
    Chunk prev;
    prev.chunk_id = "d#0";
    prev.text = std::string(100, 'a') + std::string(700, 'b');
    auto anchor = make_anchor(prev);
    CHECK(anchor.text == std::string(600, 'b'));
    CHECK(anchor.source_chunk_id == "d#0");
    auto prompt = build_cd_prompt(anchor, std::string(650, 'c') + "TAIL");
    CHECK(prompt.find(std::string(600, 'c')) != std::string::npos);
    CHECK(prompt.find("TAIL") == std::string::npos);
    CHECK(make_anchor(prev, 5).text == "bbbbb");
}

TEST_CASE("decide_continuity", "[continuity]") {
    auto chunks = chunks_of(3);
    auto prompt = build_cd_prompt(make_anchor(chunks[0]), chunks[1].text);
    auto corrective = prompt + "\n\nYour previous reply could not be read. Reply with {\"same\": true} or "
                               "{\"same\": false} only.";

    SECTION("direct answer") {
        Transcript t;
        t.add_prompt(prompt, R"({"same": false})");
        ChatGateway gw(std::make_shared<ScriptedBackend>(t));
        auto d = decide_continuity(chunks[0], chunks[1], gw);
        CHECK_FALSE(d.same);
        CHECK(d.calls == 1);
        CHECK(d.pair == std::pair<std::string, std::string>{"d#0", "d#1"});
    }
    SECTION("unparseable twice defaults to TRUE") {
        Transcript t;
        t.add_prompt(prompt, "hmm");
        t.add_prompt(corrective, "still unsure");
        ChatGateway gw(std::make_shared<ScriptedBackend>(t));
        auto d = decide_continuity(chunks[0], chunks[1], gw);
        CHECK(d.same);
        CHECK(d.defaulted);
        CHECK(d.calls == 2);
        CHECK(d.raw_response == "still unsure");
    }
    SECTION("corrective reply is used") {
        Transcript t;
        t.add_prompt(prompt, "hmm");
        t.add_prompt(corrective, "false");
        ChatGateway gw(std::make_shared<ScriptedBackend>(t));
        auto d = decide_continuity(chunks[0], chunks[1], gw);
        CHECK_FALSE(d.same);
        CHECK_FALSE(d.defaulted);
    }
    SECTION("non-adjacent chunks are rejected") {
        ChatGateway gw(std::make_shared<ScriptedBackend>(Transcript{}));
        CHECK_THROWS_AS(decide_continuity(chunks[0], chunks[2], gw), DataError);
        CHECK_THROWS_AS(decide_continuity(chunks[0], chunks_of(2, "other")[1], gw), DataError);
    }
}

TEST_CASE("propagate_cnm inherits on TRUE and extracts on FALSE", "[continuity]") {
    auto chunks = chunks_of(2);
    CNM prev{"pump", {"pump seal"}, "P1", 0.9};
    int calls = 0;
    auto extract = counting_extractor(calls);
    ContinuityDecision yes;
    auto [kept, origin] = propagate_cnm(prev, yes, chunks[1], extract);
    CHECK(kept == prev);
    CHECK(origin == CnmOrigin::inherited);
    CHECK(calls == 0);

    ContinuityDecision no;
    no.same = false;
    auto [fresh, origin2] = propagate_cnm(prev, no, chunks[1], extract);
    CHECK(fresh.nouns == std::vector<std::string>{"noun1"});
    CHECK(origin2 == CnmOrigin::extracted);
    CHECK(calls == 1);
}

TEST_CASE("run_chain worked examples", "[continuity]") {
    int calls = 0;
    SECTION("all TRUE") {
        auto chain = run_chain(chunks_of(3), scripted_decider({true, true, true}), counting_extractor(calls));
        CHECK(calls == 1);
        CHECK(chain[2].cnm == chain[0].cnm);
        CHECK(chain[1].origin == CnmOrigin::inherited);
    }
    SECTION("TRUE, FALSE") {
        auto chain = run_chain(chunks_of(3), scripted_decider({true, true, false}), counting_extractor(calls));
        CHECK(calls == 2);
        CHECK(chain[1].cnm == chain[0].cnm);
        CHECK(chain[2].cnm.nouns.front() == "noun2");
        CHECK_FALSE(chain[0].decision);
        CHECK(chain[2].decision->pair.first == "d#1");
    }
    SECTION("single chunk") {
        auto chain = run_chain(chunks_of(1), scripted_decider({true}), counting_extractor(calls));
        CHECK(calls == 1);
        CHECK(chain.size() == 1);
    }
    SECTION("empty input") {
        CHECK(run_chain({}, scripted_decider({}), counting_extractor(calls)).empty());
        CHECK(calls == 0);
    }
}

TEST_CASE("run_chain extraction-count law and run constancy", "[continuity][property]") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        auto n = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
        std::vector<bool> same(n, true);
        long falses = 0;
        for (std::size_t i = 1; i < n; ++i) {
            same[i] = std::bernoulli_distribution(0.6)(rng);
            falses += !same[i];
        }
        int calls = 0;
        ChainStats stats;
        std::size_t seen = 0;
        auto chain = run_chain(chunks_of(n), scripted_decider(same), counting_extractor(calls), &stats,
                               [&](const AnnotatedChunk&) { ++seen; });
        CHECK(calls == 1 + falses);
        CHECK(stats.extractions == 1 + falses);
        CHECK(stats.decisions == static_cast<long>(n) - 1);
        CHECK(stats.false_decisions == falses);
        CHECK(seen == n);
        for (std::size_t i = 1; i < n; ++i)
            if (same[i])
                CHECK(chain[i].cnm == chain[i - 1].cnm);
    }
}

TEST_CASE("audit log has one line per chunk", "[continuity]") {
    int calls = 0;
    auto chain = run_chain(chunks_of(3), scripted_decider({true, false, true}), counting_extractor(calls));
    std::ostringstream out;
    write_audit_log(out, chain);
    std::istringstream in(out.str());
    std::vector<nlohmann::json> lines;
    for (std::string line; std::getline(in, line);)
        lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0]["pair"][0].is_null());
    CHECK(lines[0]["cnm_origin"] == "EXTRACTED");
    CHECK(lines[1]["value"] == false);
    CHECK(lines[1]["cnm_origin"] == "EXTRACTED");
    CHECK(lines[2]["value"] == true);
    CHECK(lines[2]["cnm_origin"] == "INHERITED");
    CHECK(lines[2]["raw_response_digest"].get<std::string>().size() == 64);
}
