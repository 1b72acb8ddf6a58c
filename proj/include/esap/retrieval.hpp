#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "esap/error.hpp"

namespace esap {

using json = nlohmann::json;

struct Hit {
    std::string chunk_id;
    std::string doc_id;
    std::uint32_t version = 0;
    std::size_t token_begin = 0;
    std::size_t token_end = 0;
    std::string text;
    std::optional<double> lexical_score;
    std::optional<double> dense_score;
    double fused_score = 0.0;
    std::size_t rank = 0;

    bool operator==(const Hit&) const = default;
};

/// Ranked hits (ranks 1..n, fused score non-increasing, ties by chunk_id).
struct RetrievalResult {
    std::string query;
    std::vector<Hit> hits;
    std::vector<std::string> filters;

    bool operator==(const RetrievalResult&) const = default;

    void rerank() {
        for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = i + 1;
    }

    void truncate(std::size_t k) {
        if (hits.size() > k) hits.resize(k);
    }
};

inline json to_json(const Hit& h) {
    json j{{"rank", h.rank},
           {"chunk_id", h.chunk_id},
           {"doc_id", h.doc_id},
           {"version", h.version},
           {"token_span", {h.token_begin, h.token_end}},
           {"fused_score", h.fused_score},
           {"lexical_score", h.lexical_score ? json(*h.lexical_score) : json(nullptr)},
           {"dense_score", h.dense_score ? json(*h.dense_score) : json(nullptr)},
           {"text", h.text}};
    return j;
}

inline json to_json(const RetrievalResult& r) {
    json hits = json::array();
    for (const auto& h : r.hits) hits.push_back(to_json(h));
    return json{{"query", r.query}, {"filters", r.filters}, {"hits", std::move(hits)}};
}

inline void sort_by_fused(std::vector<Hit>& hits) {
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.fused_score != b.fused_score ? a.fused_score > b.fused_score : a.chunk_id < b.chunk_id;
    });
}

/// Reciprocal rank fusion: fused(x) = sum over lists of 1 / (c + rank(x)).
/// Items missing from a list contribute nothing for it. Per-retriever scores
/// carried by the inputs are merged onto the fused hit.
inline RetrievalResult fuse(const RetrievalResult& a, const RetrievalResult& b, double c = 60.0) {
    std::map<std::string, Hit> merged;
    std::map<std::string, double> contrib_a, contrib_b;
    auto absorb = [&](const RetrievalResult& list, std::map<std::string, double>& contrib) {
        for (const auto& h : list.hits) {
            auto [it, inserted] = merged.try_emplace(h.chunk_id, h);
            if (!inserted) {
                if (h.lexical_score) it->second.lexical_score = h.lexical_score;
                if (h.dense_score) it->second.dense_score = h.dense_score;
            }
            contrib[h.chunk_id] = 1.0 / (c + static_cast<double>(h.rank));
        }
    };
    absorb(a, contrib_a);
    absorb(b, contrib_b);
    RetrievalResult out;
    out.query = a.query.empty() ? b.query : a.query;
    out.filters = {"rrf(c=" + json(c).dump() + ")"};
    for (auto& [id, h] : merged) {
        const double x = contrib_a.count(id) ? contrib_a[id] : 0.0;
        const double y = contrib_b.count(id) ? contrib_b[id] : 0.0;
        h.fused_score = x + y;
        out.hits.push_back(std::move(h));
    }
    sort_by_fused(out.hits);
    out.rerank();
    return out;
}

/// doc_id -> principals allowed to read it.
using AclTable = std::map<std::string, std::set<std::string>>;

/// Keeps hits whose document ACL contains `principal` or "*". Order preserved,
/// ranks renumbered.
inline RetrievalResult filter_acl(const RetrievalResult& r, std::string_view principal, const AclTable& acl) {
    RetrievalResult out;
    out.query = r.query;
    out.filters = r.filters;
    out.filters.push_back("acl(" + std::string(principal) + ")");
    const std::string p(principal);
    for (const auto& h : r.hits) {
        auto it = acl.find(h.doc_id);
        if (it != acl.end() && (it->second.count("*") || it->second.count(p))) out.hits.push_back(h);
    }
    out.rerank();
    return out;
}

/// Ordered redaction rules.
class GuardRules {
public:
    struct Rule {
        std::string name;
        std::string pattern;
        std::string kind;
        std::regex re;
    };

    GuardRules() = default;

    /// Email, US-style phone and SSN patterns.
    static GuardRules defaults() {
        GuardRules g;
        g.add("email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,})", "email");
        g.add("phone", R"(\(?\d{3}\)?[-. ]?\d{3}[-. ]?\d{4})", "phone");
        g.add("ssn", R"(\d{3}-\d{2}-\d{4})", "ssn");
        return g;
    }

    void add(std::string name, std::string pattern, std::string kind) {
        try {
            std::regex re(pattern, std::regex::ECMAScript);
            rules_.push_back({std::move(name), std::move(pattern), std::move(kind), std::move(re)});
        } catch (const std::regex_error& e) {
            throw Error(Errc::ConfigError, "guard rule '" + name + "' does not compile: " + e.what());
        }
    }

    const std::vector<Rule>& rules() const noexcept { return rules_; }
    bool empty() const noexcept { return rules_.empty(); }

    /// Replaces each match with "[REDACTED:<kind>]". Matches from all rules are
    /// collected on the original text; overlaps resolve leftmost first, then by
    /// rule order. Text outside the chosen matches is copied unchanged.
    std::string redact(std::string_view text) const {
        struct Match {
            std::size_t begin, end, rule;
        };
        std::vector<Match> matches;
        const std::string s(text);
        for (std::size_t ri = 0; ri < rules_.size(); ++ri) {
            for (auto it = std::sregex_iterator(s.begin(), s.end(), rules_[ri].re); it != std::sregex_iterator(); ++it) {
                const auto pos = static_cast<std::size_t>(it->position());
                const auto len = static_cast<std::size_t>(it->length());
                if (len > 0) matches.push_back({pos, pos + len, ri});
            }
        }
        if (matches.empty()) return s;
        std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
            return a.begin != b.begin ? a.begin < b.begin : a.rule < b.rule;
        });
        std::string out;
        std::size_t cursor = 0;
        for (const auto& m : matches) {
            if (m.begin < cursor) continue;
            out.append(s, cursor, m.begin - cursor);
            out += "[REDACTED:" + rules_[m.rule].kind + "]";
            cursor = m.end;
        }
        out.append(s, cursor, std::string::npos);
        return out;
    }

private:
    std::vector<Rule> rules_;
};

inline RetrievalResult apply_guards(const RetrievalResult& r, const GuardRules& rules) {
    RetrievalResult out = r;
    if (rules.empty()) return out;
    for (auto& h : out.hits) h.text = rules.redact(h.text);
    out.filters.push_back("guards");
    return out;
}

} // namespace esap
