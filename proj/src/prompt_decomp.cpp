// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/prompt_decomp.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "splitflow_templates.hpp"

namespace splitflow {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

void PromptPair::validate() const {
    if (trim(source_text).empty()) throw ConfigError("prompt pair: source text is empty");
    if (trim(target_text).empty()) throw ConfigError("prompt pair: target text is empty");
}

std::string to_string(PromptTemplate t) {
    switch (t) {
        case PromptTemplate::psi1: return "psi1";
        case PromptTemplate::psi2: return "psi2";
        case PromptTemplate::none: return "none";
    }
    return "none";
}

std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::llm: return "llm";
        case Provenance::rule: return "rule";
        case Provenance::manual: return "manual";
        case Provenance::attribute: return "attribute";
    }
    return "rule";
}

PromptTemplate template_from_string(const std::string& s) {
    if (s == "psi1") return PromptTemplate::psi1;
    if (s == "psi2") return PromptTemplate::psi2;
    throw ConfigError("unknown template '" + s + "' (expected psi1 or psi2)");
}

void LlmEndpointConfig::validate() const {
    parse_url(base_url);
    if (timeout.count() <= 0) throw ConfigError("llm endpoint: timeout must be positive");
    if (model.empty()) throw ConfigError("llm endpoint: model name is empty");
}

ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:]+\])(?::([0-9]{1,5}))?(/[^\s]*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ConfigError("malformed endpoint URL: '" + url + "'");
    ParsedUrl u;
    u.scheme = m[1];
    u.host = m[2];
    u.port = m[3].matched ? std::stoi(m[3]) : (u.scheme == "https" ? 443 : 80);
    if (u.port <= 0 || u.port > 65535) throw ConfigError("endpoint URL port out of range: '" + url + "'");
    u.path = m[4].matched ? m[4].str() : std::string();
    while (!u.path.empty() && u.path.back() == '/') u.path.pop_back();
    return u;
}

std::string render_template(const PromptPair& pair, PromptTemplate tmpl) {
    pair.validate();
    std::string text;
    switch (tmpl) {
        case PromptTemplate::psi1: text = resources::kPsi1; break;
        case PromptTemplate::psi2: text = resources::kPsi2; break;
        case PromptTemplate::none: throw ConfigError("render_template: no template selected");
    }
    // Substitute the target first so a source caption containing "{target}" stays verbatim.
    const std::string target_marker = "{target}";
    const std::string source_marker = "{source}";
    const auto tpos = text.find(target_marker);
    const auto spos = text.find(source_marker);
    text.replace(tpos, target_marker.size(), pair.target_text);
    text.replace(spos, source_marker.size(), pair.source_text);
    return text;
}

std::vector<std::string> parse_numbered_list(const std::string& text) {
    static const std::regex item(R"(^\s*\d+\s*[.):]\s*(.*)$)");
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();  // CRLF replies
        std::smatch m;
        if (std::regex_match(line, m, item)) {
            std::string body = trim(m[1]);
            if (body.size() >= 2 && body.front() == '"' && body.back() == '"' &&
                body.find('"', 1) == body.size() - 1) {
                body = trim(body.substr(1, body.size() - 2));
            }
            if (!body.empty()) out.push_back(std::move(body));
        }
        start = end + 1;
    }
    return out;
}

std::string chat_request_body(const LlmEndpointConfig& endpoint, const std::string& prompt) {
    nlohmann::json body = {{"model", endpoint.model},
                           {"temperature", endpoint.temperature},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    return body.dump();
}

std::string chat_reply_content(const std::string& response_body) {
    try {
        const auto j = nlohmann::json::parse(response_body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("chat completion reply is not in the expected format: ") + e.what(),
                         response_body);
    }
}

DecompositionResult decompose_llm(const PromptPair& pair, PromptTemplate tmpl, const LlmEndpointConfig& endpoint,
                                  std::size_t n_max) {
    endpoint.validate();
    if (n_max == 0) throw ConfigError("decompose_llm: n_max must be >= 1");
    const std::string prompt = render_template(pair, tmpl);
    const ParsedUrl url = parse_url(endpoint.base_url);

    httplib::Headers headers;
    if (const char* key = std::getenv(endpoint.api_key_env.c_str()); key != nullptr && *key != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const std::string path = url.path + "/chat/completions";
    const std::string body = chat_request_body(endpoint, prompt);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);

    httplib::Result res;
    if (url.scheme == "https") {
#ifdef CPPHTTPLIB_OPENSSL_SUPPORT
        httplib::SSLClient cli(url.host, url.port);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        res = cli.Post(path, headers, body, "application/json");
#else
        throw NetworkError("https endpoints need a build with OpenSSL support");
#endif
    } else {
        httplib::Client cli(url.host, url.port);
        cli.set_connection_timeout(secs.count(), usecs.count());
        cli.set_read_timeout(secs.count(), usecs.count());
        res = cli.Post(path, headers, body, "application/json");
    }
    if (!res) {
        throw NetworkError("chat completion request to " + endpoint.base_url + " failed: " +
                           httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw NetworkError("chat completion request returned HTTP " + std::to_string(res->status));
    }
    const std::string content = chat_reply_content(res->body);
    auto items = parse_numbered_list(content);
    if (items.empty()) throw ParseError("LLM reply contains no numbered items", content);
    if (items.size() > n_max) items.resize(n_max);

    DecompositionResult r;
    r.sub_prompts = std::move(items);
    r.provenance = Provenance::llm;
    r.template_used = tmpl;
    return r;
}

// ---------------------------------------------------------------------------
// Rule-based splitter

namespace {

struct Word {
    std::string text;
    bool comma_after = false;
};

std::vector<Word> tokenize(const std::string& s) {
    std::vector<Word> words;
    std::string cur;
    auto flush = [&](bool comma) {
        if (!cur.empty()) {
            words.push_back({cur, comma});
            cur.clear();
        } else if (comma && !words.empty()) {
            words.back().comma_after = true;
        }
    };
    for (char ch : s) {
        if (ch == ',' || ch == ';') flush(true);
        else if (std::isspace(static_cast<unsigned char>(ch))) flush(false);
        else cur.push_back(ch);
    }
    flush(false);
    while (!words.empty()) {
        std::string& last = words.back().text;
        while (!last.empty() && (last.back() == '.' || last.back() == '!' || last.back() == '?')) last.pop_back();
        if (!last.empty()) break;
        words.pop_back();
    }
    return words;
}

bool is_conjunction(const std::string& w) { return w == "and" || w == "while" || w == "but"; }

bool is_attribute_marker(const std::string& w) {
    return w == "with" || w == "wearing" || w == "holding" || w == "carrying" || w == "having";
}

bool is_gerund(const std::string& w) {
    static const std::array<const char*, 22> nouns = {
        "thing",    "something", "nothing",  "anything", "everything", "king",    "ring",   "string",
        "building", "ceiling",   "morning",  "evening",  "spring",     "wedding", "pudding", "clothing",
        "sibling",  "duckling",  "darling",  "wing",     "swing",      "ping"};
    if (w.size() < 5 || w.compare(w.size() - 3, 3, "ing") != 0) return false;
    return std::none_of(nouns.begin(), nouns.end(), [&](const char* n) { return w == n; });
}

std::string join(const std::vector<Word>& words, std::size_t b, std::size_t e) {
    std::string out;
    for (std::size_t i = b; i < e; ++i) {
        if (!out.empty()) out += ' ';
        out += words[i].text;
    }
    return out;
}

}  // namespace

DecompositionResult decompose_rule_based(const PromptPair& pair, std::size_t n_max) {
    pair.validate();
    if (n_max == 0) throw ConfigError("decompose_rule_based: n_max must be >= 1");
    DecompositionResult r;
    r.provenance = Provenance::rule;
    r.template_used = PromptTemplate::none;

    const std::vector<Word> words = tokenize(pair.target_text);
    // Clause boundaries: index of the first word of each clause after the head.
    struct Clause {
        std::size_t begin;
        bool after_comma;
    };
    std::vector<Clause> clauses;
    std::size_t head_end = words.size();
    for (std::size_t i = 1; i < words.size(); ++i) {
        const std::string w = lower(words[i].text);
        const bool comma = words[i - 1].comma_after;
        // "while smiling": the gerund stays in the clause its conjunction opened
        const bool gerund = is_gerund(w) && (comma || !is_conjunction(lower(words[i - 1].text)));
        if (comma || is_conjunction(w) || is_attribute_marker(w) || gerund) {
            if (head_end == words.size()) head_end = i;
            clauses.push_back({i, comma});
        }
    }
    if (clauses.empty()) {
        r.sub_prompts = {trim(pair.target_text)};
        return r;
    }

    const std::string head = join(words, 0, head_end);
    struct Phrase {
        std::string text;  // without a leading conjunction
        std::string raw;   // as written, used when merging into the previous clause
        bool comma;
    };
    std::vector<Phrase> phrases;
    for (std::size_t c = 0; c < clauses.size(); ++c) {
        const std::size_t b0 = clauses[c].begin;
        std::size_t b = b0;
        const std::size_t e = c + 1 < clauses.size() ? clauses[c + 1].begin : words.size();
        if (is_conjunction(lower(words[b].text))) ++b;
        if (b >= e) continue;
        phrases.push_back({join(words, b, e), join(words, b0, e), clauses[c].after_comma});
    }
    if (phrases.empty()) {
        r.sub_prompts = {trim(pair.target_text)};
        return r;
    }
    while (phrases.size() > n_max) {
        const Phrase last = phrases.back();
        phrases.pop_back();
        phrases.back().text += (last.comma ? ", " : " ") + last.raw;
    }
    for (const auto& [phrase, raw, comma] : phrases) {
        r.sub_prompts.push_back(head.empty() ? phrase : head + (comma ? ", " : " ") + phrase);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Attribute decomposer

DecompositionResult decompose_attributes(const Condition& cond_src, const Condition& cond_tgt,
                                         const std::vector<std::size_t>& block_layout, std::size_t n_max) {
    if (n_max == 0) throw ConfigError("decompose_attributes: n_max must be >= 1");
    if (cond_src.dim() != cond_tgt.dim()) throw DimensionError("decompose_attributes: condition dims differ");
    std::size_t total = 0;
    for (std::size_t b : block_layout) {
        if (b == 0) throw ConfigError("decompose_attributes: empty block in layout");
        total += b;
    }
    if (total != cond_src.dim()) throw ConfigError("decompose_attributes: block layout does not partition the embedding");

    std::vector<std::pair<std::size_t, std::size_t>> changed;  // (offset, length)
    std::size_t offset = 0;
    for (std::size_t b : block_layout) {
        const bool differs = !std::equal(cond_src.embedding.begin() + static_cast<std::ptrdiff_t>(offset),
                                         cond_src.embedding.begin() + static_cast<std::ptrdiff_t>(offset + b),
                                         cond_tgt.embedding.begin() + static_cast<std::ptrdiff_t>(offset));
        if (differs) changed.emplace_back(offset, b);
        offset += b;
    }
    if (changed.empty()) throw ConfigError("decompose_attributes: source and target are identical, no edit requested");

    DecompositionResult r;
    r.provenance = Provenance::attribute;
    r.template_used = PromptTemplate::none;
    const std::size_t n = std::min(changed.size(), n_max);
    for (std::size_t k = 0; k < n; ++k) {
        Condition sub = cond_src;
        sub.is_null = false;
        const std::size_t last = (k + 1 == n) ? changed.size() : k + 1;
        std::string label;
        for (std::size_t m = k; m < last; ++m) {
            const auto [o, len] = changed[m];
            std::copy_n(cond_tgt.embedding.begin() + static_cast<std::ptrdiff_t>(o), len,
                        sub.embedding.begin() + static_cast<std::ptrdiff_t>(o));
            label += (label.empty() ? "" : "+") + std::string("block") + std::to_string(o);
        }
        sub.label = label;
        r.sub_prompts.push_back(label);
        r.sub_conditions.push_back(std::move(sub));
    }
    return r;
}

DecompositionResult decompose_with_fallback(const PromptPair& pair, PromptTemplate tmpl,
                                            const LlmEndpointConfig& endpoint, std::size_t n_max, bool strict,
                                            std::string* warning) {
    try {
        return decompose_llm(pair, tmpl, endpoint, n_max);
    } catch (const NetworkError& e) {
        if (strict) throw;
        if (warning) *warning = e.what();
    } catch (const ParseError& e) {
        if (strict) throw;
        if (warning) *warning = e.what();
    }
    return decompose_rule_based(pair, n_max);
}

}  // namespace splitflow
