// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "splitflow/velocity_field.hpp"

namespace splitflow {

struct PromptPair {
    std::string source_text;
    std::string target_text;

    /// Both texts must contain a non-whitespace character. Throws ConfigError.
    void validate() const;
};

enum class PromptTemplate { psi1, psi2, none };
enum class Provenance { llm, rule, manual, attribute };

std::string to_string(PromptTemplate t);
std::string to_string(Provenance p);
PromptTemplate template_from_string(const std::string& s);

struct DecompositionResult {
    std::vector<std::string> sub_prompts;
    std::vector<Condition> sub_conditions;  // filled by the attribute and manual decomposers
    Provenance provenance = Provenance::rule;
    PromptTemplate template_used = PromptTemplate::none;

    std::size_t size() const noexcept { return sub_conditions.empty() ? sub_prompts.size() : sub_conditions.size(); }
};

/// OpenAI-compatible chat-completion endpoint.
struct LlmEndpointConfig {
    std::string base_url = "http://127.0.0.1:8080/v1";
    std::string model = "mistral-7b-instruct";
    std::string api_key_env = "SPLITFLOW_LLM_API_KEY";
    std::chrono::milliseconds timeout{30000};
    double temperature = 0.0;

    void validate() const;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path;  // without trailing slash, may be empty
};

/// Accepts http(s)://host[:port][/path]. Throws ConfigError.
ParsedUrl parse_url(const std::string& url);

/// Template text with the captions substituted verbatim.
std::string render_template(const PromptPair& pair, PromptTemplate tmpl);

/// Lines of the form "1. x", "2) x" or "3: x", trimmed, in order.
std::vector<std::string> parse_numbered_list(const std::string& text);

/// Request body for the chat-completion call.
std::string chat_request_body(const LlmEndpointConfig& endpoint, const std::string& prompt);

/// Extracts choices[0].message.content. Throws ParseError.
std::string chat_reply_content(const std::string& response_body);

/// Throws NetworkError on transport or HTTP failure and ParseError when the
/// reply holds no numbered items. At most n_max items are kept.
DecompositionResult decompose_llm(const PromptPair& pair, PromptTemplate tmpl, const LlmEndpointConfig& endpoint,
                                  std::size_t n_max = 3);

/// decompose_llm, falling back to decompose_rule_based on NetworkError or
/// ParseError unless strict. The reason for a fallback goes to *warning.
DecompositionResult decompose_with_fallback(const PromptPair& pair, PromptTemplate tmpl,
                                            const LlmEndpointConfig& endpoint, std::size_t n_max, bool strict,
                                            std::string* warning = nullptr);

/// Heuristic clause splitter. The target is cut into a head noun phrase
/// (everything before the first clause marker) and clauses opened by commas,
/// "and"/"while"/"but", "with"/"wearing"/"holding"/"carrying" or a gerund;
/// place prepositions stay attached to the clause before them. Each clause
/// is attached to the head; clauses beyond n_max are merged into the last one.
DecompositionResult decompose_rule_based(const PromptPair& pair, std::size_t n_max = 3);

/// One sub-condition per one-hot block where the target differs from the
/// source: the source with that single block replaced. Blocks beyond n_max are
/// folded into the last sub-condition. Throws ConfigError for identical inputs.
DecompositionResult decompose_attributes(const Condition& cond_src, const Condition& cond_tgt,
                                         const std::vector<std::size_t>& block_layout, std::size_t n_max = 3);

}  // namespace splitflow
