// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>

#include "splitflow/prompt_decomp.hpp"
#include "stub_llm.hpp"
#include "support.hpp"

using namespace splitflow;

namespace {

const PromptPair kShepherd{sftest::kShepherdSource, sftest::kShepherdTarget};

LlmEndpointConfig endpoint_for(const sftest::StubLlm& stub) {
    LlmEndpointConfig e;
    e.base_url = stub.base_url();
    e.timeout = std::chrono::milliseconds(5000);
    e.api_key_env = "SPLITFLOW_TEST_LLM_KEY";
    return e;
}

std::size_t blocks_differing(const Condition& a, const Condition& b, const std::vector<std::size_t>& layout) {
    std::size_t n = 0, off = 0;
    for (std::size_t len : layout) {
        for (std::size_t i = off; i < off + len; ++i) {
            if (a.embedding[i] != b.embedding[i]) {
                ++n;
                break;
            }
        }
        off += len;
    }
    return n;
}

}  // namespace

TEST_CASE("prompt pair validation") {
    CHECK_NOTHROW(kShepherd.validate());
    CHECK_THROWS_AS((PromptPair{"a cat", "  \t\n"}.validate()), ConfigError);
    CHECK_THROWS_AS((PromptPair{"", "a dog"}.validate()), ConfigError);
    CHECK_THROWS_AS(render_template(PromptPair{"a cat", "   "}, PromptTemplate::psi1), ConfigError);
}

TEST_CASE("templates are rendered verbatim") {
    const std::string p1 = render_template(kShepherd, PromptTemplate::psi1);
    CHECK(p1 ==
          "Given the source caption:\n"
          "\"A german shepherd dog stands on the grass with mouth closed\"\n"
          "and the target caption:\n"
          "\"A german shepherd dog with black sunglasses jumping on the grass with mouth opened\",\n"
          "Write three semantic captions that split the target caption.\n"
          "List each as a numbered item.\n");
    const std::string p2 = render_template(kShepherd, PromptTemplate::psi2);
    CHECK(p2.find("Split the target sentence into three concise sentences based on step-by-step changes.") !=
          std::string::npos);
    CHECK(p2.find("\"A german shepherd dog stands on the grass with mouth closed\"") != std::string::npos);
    CHECK(p2.find("List each as a numbered item.") != std::string::npos);
    // captions holding placeholder-like text are not re-expanded
    const std::string odd = render_template(PromptPair{"{target}", "x"}, PromptTemplate::psi1);
    CHECK(odd.find("\"{target}\"") != std::string::npos);
    CHECK(to_string(template_from_string("psi2")) == "psi2");
    CHECK_THROWS_AS(template_from_string("psi3"), ConfigError);
}

TEST_CASE("parse_numbered_list examples") {
    CHECK(parse_numbered_list("1. a\n2. b\n3. c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(parse_numbered_list("1) a\nnoise\n2) b") == std::vector<std::string>{"a", "b"});
    CHECK(parse_numbered_list("").empty());
    CHECK(parse_numbered_list("Here you go:\n  1: \"first one\"  \r\n2. second\n\nThanks") ==
          std::vector<std::string>{"first one", "second"});
    CHECK(parse_numbered_list("no numbers at all").empty());
}

TEST_CASE("chat wire format") {
    LlmEndpointConfig e;
    const auto body = nlohmann::json::parse(chat_request_body(e, "hello"));
    CHECK(body.at("model") == e.model);
    CHECK(body.at("temperature") == 0.0);
    CHECK(body.at("messages")[0].at("role") == "user");
    CHECK(body.at("messages")[0].at("content") == "hello");
    CHECK(chat_reply_content(R"({"choices":[{"message":{"role":"assistant","content":"1. x"}}]})") == "1. x");
    CHECK_THROWS_AS(chat_reply_content("not json"), ParseError);
    CHECK_THROWS_AS(chat_reply_content(R"({"choices":[]})"), ParseError);
}

TEST_CASE("endpoint urls") {
    const ParsedUrl u = parse_url("http://127.0.0.1:8080/v1/");
    CHECK(u.scheme == "http");
    CHECK(u.host == "127.0.0.1");
    CHECK(u.port == 8080);
    CHECK(u.path == "/v1");
    CHECK(parse_url("https://api.example.com").port == 443);
    CHECK(parse_url("https://api.example.com").path.empty());
    CHECK_THROWS_AS(parse_url("ftp://x"), ConfigError);
    CHECK_THROWS_AS(parse_url("not a url"), ConfigError);
    LlmEndpointConfig e;
    e.timeout = std::chrono::milliseconds(0);
    CHECK_THROWS_AS(e.validate(), ConfigError);
}

TEST_CASE("llm decomposition against a stub server") {
    sftest::StubLlm stub;
    const LlmEndpointConfig e = endpoint_for(stub);

    SUBCASE("the three sub-captions come back verbatim") {
        stub.reply_with(std::string("1. ") + sftest::kShepherdSubCaptions[0] + "\n2. " + sftest::kShepherdSubCaptions[1] +
                        "\n3. " + sftest::kShepherdSubCaptions[2]);
        ::setenv("SPLITFLOW_TEST_LLM_KEY", "sk-test-123", 1);
        const DecompositionResult r = decompose_llm(kShepherd, PromptTemplate::psi1, e);
        ::unsetenv("SPLITFLOW_TEST_LLM_KEY");
        REQUIRE(r.sub_prompts.size() == 3);
        for (int k = 0; k < 3; ++k) CHECK(r.sub_prompts[k] == sftest::kShepherdSubCaptions[k]);
        CHECK(r.provenance == Provenance::llm);
        CHECK(r.template_used == PromptTemplate::psi1);
        CHECK(stub.last_auth() == "Bearer sk-test-123");
        const auto sent = nlohmann::json::parse(stub.last_body());
        CHECK(sent.at("messages")[0].at("content") == render_template(kShepherd, PromptTemplate::psi1));
    }
    SUBCASE("no key in the environment sends no authorization") {
        ::unsetenv("SPLITFLOW_TEST_LLM_KEY");
        stub.reply_with("1. a");
        decompose_llm(kShepherd, PromptTemplate::psi2, e);
        CHECK(stub.last_auth().empty());
    }
    SUBCASE("replies are capped") {
        stub.reply_with("1. a\n2. b\n3. c\n4. d\n5. e\n6. f\n7. g");
        const DecompositionResult r = decompose_llm(kShepherd, PromptTemplate::psi1, e, 3);
        CHECK(r.sub_prompts == std::vector<std::string>{"a", "b", "c"});
        CHECK(r.provenance == Provenance::llm);
        CHECK(decompose_llm(kShepherd, PromptTemplate::psi1, e, 100).size() == 7);
    }
    SUBCASE("prose is a parse error carrying the raw text") {
        stub.reply_with("I think the dog should wear sunglasses.");
        try {
            decompose_llm(kShepherd, PromptTemplate::psi1, e);
            FAIL("expected a parse error");
        } catch (const ParseError& err) {
            CHECK(err.raw() == "I think the dog should wear sunglasses.");
        }
        stub.raw_body("<html>oops</html>");
        CHECK_THROWS_AS(decompose_llm(kShepherd, PromptTemplate::psi1, e), ParseError);
    }
    SUBCASE("http failure is a network error") {
        stub.fail_with(503);
        CHECK_THROWS_AS(decompose_llm(kShepherd, PromptTemplate::psi1, e), NetworkError);
    }
}

TEST_CASE("unreachable endpoint is a network error") {
    LlmEndpointConfig e;
    e.base_url = "http://127.0.0.1:" + std::to_string(sftest::dead_port()) + "/v1";
    e.timeout = std::chrono::milliseconds(2000);
    CHECK_THROWS_AS(decompose_llm(kShepherd, PromptTemplate::psi1, e), NetworkError);
}

TEST_CASE("rule-based splitter") {
    SUBCASE("comma separated attributes") {
        const auto r = decompose_rule_based(PromptPair{"a cat", "a cat, striped, sleeping, on a red sofa"}, 3);
        CHECK(r.sub_prompts ==
              std::vector<std::string>{"a cat, striped", "a cat, sleeping", "a cat, on a red sofa"});
        CHECK(r.provenance == Provenance::rule);
        CHECK(r.template_used == PromptTemplate::none);
    }
    SUBCASE("single word") {
        const auto r = decompose_rule_based(PromptPair{"cat", "dog"}, 3);
        CHECK(r.sub_prompts == std::vector<std::string>{"dog"});
    }
    SUBCASE("german shepherd") {
        const auto r = decompose_rule_based(kShepherd, 3);
        CHECK(r.sub_prompts == std::vector<std::string>{"A german shepherd dog with black sunglasses",
                                                        "A german shepherd dog jumping on the grass",
                                                        "A german shepherd dog with mouth opened"});
        for (const auto& s : r.sub_prompts) CHECK(s.find("german shepherd") != std::string::npos);
    }
    SUBCASE("excess clauses merge into the last") {
        const auto r = decompose_rule_based(PromptPair{"a man", "a man wearing a hat and holding a cup while smiling"}, 2);
        CHECK(r.sub_prompts ==
              std::vector<std::string>{"a man wearing a hat", "a man holding a cup while smiling"});
    }
    SUBCASE("nouns ending in -ing are not clause markers") {
        const auto r = decompose_rule_based(PromptPair{"x", "a golden ring on a wooden table"}, 3);
        CHECK(r.sub_prompts == std::vector<std::string>{"a golden ring on a wooden table"});
    }
    CHECK_THROWS_AS(decompose_rule_based(kShepherd, 0), ConfigError);
}

TEST_CASE("attribute decomposer") {
    const std::vector<std::size_t> layout{2, 2, 3};
    const Condition src{{1, 0, 1, 0, 1, 0, 0}, false, "src"};
    SUBCASE("every block differs") {
        const Condition tgt{{0, 1, 0, 1, 0, 0, 1}, false, "tgt"};
        const auto r = decompose_attributes(src, tgt, layout, 3);
        REQUIRE(r.size() == 3);
        CHECK(r.provenance == Provenance::attribute);
        for (const auto& c : r.sub_conditions) CHECK(blocks_differing(c, src, layout) == 1);
        CHECK(r.sub_conditions[0].embedding == std::vector<double>{0, 1, 1, 0, 1, 0, 0});
        CHECK(r.sub_conditions[2].embedding == std::vector<double>{1, 0, 1, 0, 0, 0, 1});
        // capped: the overflow folds into the last sub-condition
        const auto capped = decompose_attributes(src, tgt, layout, 2);
        REQUIRE(capped.size() == 2);
        CHECK(capped.sub_conditions[1].embedding == std::vector<double>{1, 0, 0, 1, 0, 0, 1});
    }
    SUBCASE("one block differs") {
        const Condition tgt{{1, 0, 0, 1, 1, 0, 0}, false, "tgt"};
        const auto r = decompose_attributes(src, tgt, layout, 3);
        REQUIRE(r.size() == 1);
        CHECK(r.sub_conditions[0] == tgt);
    }
    SUBCASE("two of three differ") {
        const Condition tgt{{0, 1, 1, 0, 0, 1, 0}, false, "tgt"};
        const auto r = decompose_attributes(src, tgt, layout, 3);
        REQUIRE(r.size() == 2);
        for (const auto& c : r.sub_conditions) CHECK(blocks_differing(c, src, layout) == 1);
    }
    CHECK_THROWS_AS(decompose_attributes(src, src, layout, 3), ConfigError);
    CHECK_THROWS_AS(decompose_attributes(src, src, {2, 2}, 3), ConfigError);
    CHECK_THROWS_AS(decompose_attributes(src, Condition{{1, 0}, false, ""}, layout, 3), DimensionError);
}

TEST_CASE("llm decomposition with rule fallback") {
    sftest::StubLlm stub;
    const LlmEndpointConfig e = endpoint_for(stub);
    std::string why;
    stub.reply_with("1. one\n2. two");
    auto r = decompose_with_fallback(kShepherd, PromptTemplate::psi1, e, 3, false, &why);
    CHECK(r.provenance == Provenance::llm);
    CHECK(why.empty());

    stub.reply_with("no list here");
    r = decompose_with_fallback(kShepherd, PromptTemplate::psi1, e, 3, false, &why);
    CHECK(r.provenance == Provenance::rule);
    CHECK(r.sub_prompts == decompose_rule_based(kShepherd, 3).sub_prompts);
    CHECK_FALSE(why.empty());
    CHECK_THROWS_AS(decompose_with_fallback(kShepherd, PromptTemplate::psi1, e, 3, true), ParseError);

    stub.fail_with(500);
    CHECK(decompose_with_fallback(kShepherd, PromptTemplate::psi1, e, 3, false).provenance == Provenance::rule);
    CHECK_THROWS_AS(decompose_with_fallback(kShepherd, PromptTemplate::psi1, e, 3, true), NetworkError);
}
