#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "esap/corpus.hpp"
#include "esap/hybrid.hpp"
#include "esap/retrieval.hpp"

namespace esap {

enum class PortMode { Stub, Scripted, Http };

inline std::string_view port_mode_name(PortMode m) {
    switch (m) {
    case PortMode::Scripted: return "scripted";
    case PortMode::Http: return "http";
    default: return "stub";
    }
}

/// Environment variable names read by the live adapters.
struct PortEnv {
    std::string api_key = "ESAP_API_KEY";
    std::string base_url = "ESAP_BASE_URL";
    std::string model = "ESAP_MODEL";
    std::string embed_model = "ESAP_EMBED_MODEL";
};

struct GuardRuleSpec {
    std::string name;
    std::string pattern;
    std::string kind;
};

struct AppConfig {
    std::filesystem::path kb = "kb";
    ChunkConfig chunk;
    std::size_t k = 50;
    double rrf_c = 60.0;
    std::size_t overfetch = 4;
    AnnParams ann;
    PortMode port_mode = PortMode::Stub;
    std::optional<std::filesystem::path> script;
    PortEnv env;
    std::size_t max_retries = 3;
    double threshold = 0.6;
    bool allow_empty = false;
    std::vector<std::size_t> ks{1, 2, 4, 8, 16, 50};
    std::size_t ngram_n = 3;
    bool default_guards = true;
    std::vector<GuardRuleSpec> guard_rules;

    GuardRules guards() const {
        GuardRules g = default_guards ? GuardRules::defaults() : GuardRules{};
        for (const auto& r : guard_rules) g.add(r.name, r.pattern, r.kind);
        return g;
    }

    IndexParams index_params() const {
        IndexParams p;
        p.chunk = chunk;
        p.ann = ann;
        p.rrf_c = rrf_c;
        return p;
    }
};

inline void validate_config(const AppConfig& c);

namespace config_detail {

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw Error(Errc::ConfigError, (path.empty() ? "<root>" : path) + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw Error(Errc::ConfigError, "unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
        }
    }
}

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(Errc::ConfigError, "config key '" + path + (path.empty() ? "" : ".") + key + "' has the wrong type");
    }
}

} // namespace config_detail

/// Parses and validates a config tree. Unknown keys are rejected with their
/// dotted path.
inline AppConfig parse_config(const json& j) {
    using namespace config_detail;
    AppConfig c;
    reject_unknown(j, "", {"kb", "chunk", "retrieval", "ann", "ports", "thor", "eval", "guards"});
    std::string kb = c.kb.string();
    read(j, "", "kb", kb);
    c.kb = kb;
    if (j.contains("chunk")) {
        const auto& s = j["chunk"];
        reject_unknown(s, "chunk", {"size", "overlap"});
        read(s, "chunk", "size", c.chunk.size);
        read(s, "chunk", "overlap", c.chunk.overlap);
    }
    if (j.contains("retrieval")) {
        const auto& s = j["retrieval"];
        reject_unknown(s, "retrieval", {"k", "rrf_c", "overfetch"});
        read(s, "retrieval", "k", c.k);
        read(s, "retrieval", "rrf_c", c.rrf_c);
        read(s, "retrieval", "overfetch", c.overfetch);
    }
    if (j.contains("ann")) {
        const auto& s = j["ann"];
        reject_unknown(s, "ann", {"m", "ef_c", "ef_s", "exact_threshold", "seed"});
        read(s, "ann", "m", c.ann.m);
        read(s, "ann", "ef_c", c.ann.ef_construction);
        read(s, "ann", "ef_s", c.ann.ef_search);
        read(s, "ann", "exact_threshold", c.ann.exact_threshold);
        read(s, "ann", "seed", c.ann.seed);
    }
    if (j.contains("ports")) {
        const auto& s = j["ports"];
        reject_unknown(s, "ports", {"mode", "script", "env"});
        std::string mode = "stub";
        read(s, "ports", "mode", mode);
        if (mode == "stub") c.port_mode = PortMode::Stub;
        else if (mode == "scripted") c.port_mode = PortMode::Scripted;
        else if (mode == "http") c.port_mode = PortMode::Http;
        else throw Error(Errc::ConfigError, "ports.mode must be stub, scripted or http");
        if (s.contains("script")) {
            std::string p;
            read(s, "ports", "script", p);
            c.script = p;
        }
        if (s.contains("env")) {
            const auto& e = s["env"];
            reject_unknown(e, "ports.env", {"api_key", "base_url", "model", "embed_model"});
            read(e, "ports.env", "api_key", c.env.api_key);
            read(e, "ports.env", "base_url", c.env.base_url);
            read(e, "ports.env", "model", c.env.model);
            read(e, "ports.env", "embed_model", c.env.embed_model);
        }
    }
    if (j.contains("thor")) {
        const auto& s = j["thor"];
        reject_unknown(s, "thor", {"max_retries", "threshold", "allow_empty"});
        read(s, "thor", "max_retries", c.max_retries);
        read(s, "thor", "threshold", c.threshold);
        read(s, "thor", "allow_empty", c.allow_empty);
    }
    if (j.contains("eval")) {
        const auto& s = j["eval"];
        reject_unknown(s, "eval", {"ks", "ngram_n"});
        read(s, "eval", "ks", c.ks);
        read(s, "eval", "ngram_n", c.ngram_n);
    }
    if (j.contains("guards")) {
        const auto& s = j["guards"];
        reject_unknown(s, "guards", {"defaults", "rules"});
        read(s, "guards", "defaults", c.default_guards);
        if (s.contains("rules")) {
            if (!s["rules"].is_array()) throw Error(Errc::ConfigError, "guards.rules must be an array");
            for (std::size_t i = 0; i < s["rules"].size(); ++i) {
                const auto& r = s["rules"][i];
                const std::string path = "guards.rules[" + std::to_string(i) + "]";
                reject_unknown(r, path, {"name", "pattern", "kind"});
                GuardRuleSpec spec;
                read(r, path, "name", spec.name);
                read(r, path, "pattern", spec.pattern);
                read(r, path, "kind", spec.kind);
                if (spec.pattern.empty()) throw Error(Errc::ConfigError, path + ".pattern must not be empty");
                if (spec.kind.empty()) spec.kind = spec.name;
                c.guard_rules.push_back(std::move(spec));
            }
        }
    }
    validate_config(c);
    return c;
}

inline AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::ConfigError, "cannot open config " + path.string());
    try {
        return parse_config(json::parse(in));
    } catch (const json::parse_error& e) {
        throw Error(Errc::ConfigError, "config " + path.string() + ": " + e.what());
    }
}

inline void validate_config(const AppConfig& c) {
    validate(c.chunk);
    if (c.k == 0) throw Error(Errc::ConfigError, "retrieval.k must be positive");
    if (!(c.rrf_c > 0.0)) throw Error(Errc::ConfigError, "retrieval.rrf_c must be positive");
    if (c.overfetch == 0) throw Error(Errc::ConfigError, "retrieval.overfetch must be positive");
    if (c.ann.m < 2) throw Error(Errc::ConfigError, "ann.m must be at least 2");
    if (c.ann.ef_construction == 0 || c.ann.ef_search == 0) throw Error(Errc::ConfigError, "ann.ef_c and ann.ef_s must be positive");
    if (c.threshold < 0.0 || c.threshold > 1.0) throw Error(Errc::ConfigError, "thor.threshold must lie in [0,1]");
    if (c.ks.empty()) throw Error(Errc::ConfigError, "eval.ks must not be empty");
    for (auto k : c.ks) {
        if (k == 0) throw Error(Errc::ConfigError, "eval.ks entries must be positive");
    }
    if (c.ngram_n == 0) throw Error(Errc::ConfigError, "eval.ngram_n must be at least 1");
    if (c.port_mode == PortMode::Scripted && !c.script) throw Error(Errc::ConfigError, "ports.script is required in scripted mode");
    (void)c.guards();
}

/// The effective configuration, in config-file shape.
inline json to_json(const AppConfig& c) {
    json rules = json::array();
    for (const auto& r : c.guard_rules) rules.push_back({{"name", r.name}, {"pattern", r.pattern}, {"kind", r.kind}});
    return json{{"kb", c.kb.string()},
                {"chunk", {{"size", c.chunk.size}, {"overlap", c.chunk.overlap}}},
                {"retrieval", {{"k", c.k}, {"rrf_c", c.rrf_c}, {"overfetch", c.overfetch}}},
                {"ann",
                 {{"m", c.ann.m},
                  {"ef_c", c.ann.ef_construction},
                  {"ef_s", c.ann.ef_search},
                  {"exact_threshold", c.ann.exact_threshold},
                  {"seed", c.ann.seed}}},
                {"ports",
                 {{"mode", port_mode_name(c.port_mode)},
                  {"script", c.script ? json(c.script->string()) : json(nullptr)},
                  {"env", {{"api_key", c.env.api_key}, {"base_url", c.env.base_url}, {"model", c.env.model}, {"embed_model", c.env.embed_model}}}}},
                {"thor", {{"max_retries", c.max_retries}, {"threshold", c.threshold}, {"allow_empty", c.allow_empty}}},
                {"eval", {{"ks", c.ks}, {"ngram_n", c.ngram_n}}},
                {"guards", {{"defaults", c.default_guards}, {"rules", std::move(rules)}}}};
}

} // namespace esap
