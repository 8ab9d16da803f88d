#include <catch2/catch_amalgamated.hpp>

#include <chop/cnm.hpp>
#include <chop/composer.hpp>

using namespace chop;

namespace {

Chunk chunk_of(std::string text, std::string id = "d#0") {
    Chunk c;
    c.chunk_id = std::move(id);
    c.doc_id = "d";
    c.text = std::move(text);
    return c;
}

std::shared_ptr<ChatGateway> gateway_with(const std::vector<std::pair<std::string, std::string>>& entries) {
    Transcript t;
    for (const auto& [prompt, reply] : entries)
        t.add_prompt(prompt, reply);
    return std::make_shared<ChatGateway>(std::make_shared<ScriptedBackend>(std::move(t)));
}

} // namespace

TEST_CASE("parse_cnm_response accepts a well-formed reply", "[cnm]") {
    auto c = parse_cnm_response(
        R"({"category":"Air Conditioner","nouns":["air conditioner filter","Filter"],"model":"225B","confidence":0.92})");
    CHECK(c.category == "air conditioner");
    CHECK(c.nouns == std::vector<std::string>{"air conditioner filter", "filter"});
    CHECK(c.model == "225B");
    CHECK(c.confidence == 0.92);
}

TEST_CASE("parse_cnm_response tolerates chatter and code fences", "[cnm]") {
    auto c = parse_cnm_response("Sure!\n```json\n{\"category\": null, \"nouns\": \"battery\", \"model\": \"none\"}\n```");
    CHECK_FALSE(c.category);
    CHECK_FALSE(c.model);
    CHECK(c.nouns == std::vector<std::string>{"battery"});
    CHECK(c.confidence == 0.0);
}

TEST_CASE("parse_cnm_response repairs or rejects a bare first noun", "[cnm]") {
    auto raw = R"({"category":"camera","nouns":["lens"],"model":null,"confidence":0.5})";
    CHECK(parse_cnm_response(raw).nouns.front() == "camera lens");
    CHECK_THROWS_AS(parse_cnm_response(raw, CompoundRule::reject), CnmParseError);
}

TEST_CASE("parse_cnm_response rejects invalid replies", "[cnm]") {
    CHECK_THROWS_AS(parse_cnm_response("no json here"), CnmParseError);
    CHECK_THROWS_AS(parse_cnm_response("{not json}"), CnmParseError);
    CHECK_THROWS_AS(parse_cnm_response(R"({"category":"x","nouns":[]})"), CnmParseError);
    CHECK_THROWS_AS(parse_cnm_response(R"({"category":"x","nouns":["x a","b","c"]})"), CnmParseError);
    CHECK_THROWS_AS(parse_cnm_response(R"({"nouns":["a"],"confidence":1.5})"), CnmParseError);
    CHECK_THROWS_AS(parse_cnm_response(R"({"nouns":["a"],"confidence":"high"})"), CnmParseError);
    CHECK_THROWS_AS(parse_cnm_response(R"({"nouns":[3]})"), CnmParseError);
}

TEST_CASE("build_cnm_prompt caps the chunk at 1000 characters", "[cnm]") {
    std::string text(1500, 'x');
    auto prompt = build_cnm_prompt(text);
    CHECK(prompt.find(std::string(1000, 'x')) != std::string::npos);
    CHECK(prompt.find(std::string(1001, 'x')) == std::string::npos);
    CHECK(prompt.find("{text}") == std::string::npos);
}

TEST_CASE("extract_cnm re-prompts once, then falls back", "[cnm]") {
    auto chunk = chunk_of("Pump priming steps for the unit");
    auto prompt = build_cnm_prompt(chunk.text);

    SECTION("first reply valid") {
        auto gw = gateway_with({{prompt, R"({"category":"pump","nouns":["pump priming"],"model":"P7"})"}});
        auto r = extract_cnm(chunk, *gw);
        CHECK(r.calls == 1);
        CHECK_FALSE(r.fallback);
        CHECK(r.cnm.model == "P7");
    }
    SECTION("corrective re-prompt succeeds") {
        auto corrective = prompt + "\n\nYour previous reply could not be used: reply contains no JSON object. "
                                   "Reply again with the JSON object only.";
        auto gw = gateway_with({{prompt, "I think it is a pump."}, {corrective, R"({"nouns":["pump"]})"}});
        auto r = extract_cnm(chunk, *gw);
        CHECK(r.calls == 2);
        CHECK_FALSE(r.fallback);
        CHECK(gw->calls() == 2);
    }
    SECTION("two failures give the null CNM") {
        struct Garbage final : ChatBackend {
            ChatResponse complete(const ChatRequest&) override { return {"garbage", {}, "g"}; }
            std::string id() const override { return "g"; }
        };
        ChatGateway gw(std::make_shared<Garbage>());
        auto r = extract_cnm(chunk, gw);
        CHECK(r.calls == 2);
        CHECK(r.fallback);
        CHECK(r.cnm == null_cnm(chunk.text));
        CHECK(r.cnm.nouns == std::vector<std::string>{"pump"});
    }
    SECTION("missing transcript entry is a backend error") {
        auto gw = gateway_with({});
        CHECK_THROWS_AS(extract_cnm(chunk, *gw), BackendError);
    }
}

TEST_CASE("CNM json round trip", "[cnm]") {
    CNM c{"camera", {"camera lens", "cap"}, "X-SERIES", 0.75};
    CHECK(nlohmann::json(c).get<CNM>() == c);
    CNM empty{std::nullopt, {"unknown"}, std::nullopt, 0.0};
    CHECK(nlohmann::json(empty).get<CNM>() == empty);
}

TEST_CASE("render_prefix and compose", "[composer]") {
    CNM c{"air conditioner", {"air conditioner filter", "filter"}, "225B", 0.9};
    CHECK(render_prefix(c) == "[category: air conditioner] [nouns: air conditioner filter; filter] [model: 225B]");
    auto chunk = chunk_of("Remove the filter.");
    auto composed = compose(c, chunk);
    CHECK(composed.x_text == render_prefix(c) + "\nRemove the filter.");
    CHECK(composed.body() == chunk.text);
    CHECK(composed.chunk_ref == "d#0");

    CNM sparse{std::nullopt, {"battery"}, std::nullopt, 0.0};
    CHECK(render_prefix(sparse) == "[nouns: battery]");
    CNM none{std::nullopt, {}, std::nullopt, 0.0};
    auto bare = compose(none, chunk);
    CHECK(bare.x_text == chunk.text);
    CHECK(bare.body() == chunk.text);
}
