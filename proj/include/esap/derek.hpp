#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "esap/attribution.hpp"
#include "esap/hybrid.hpp"
#include "esap/ports.hpp"
#include "esap/prompts.hpp"

/// Grounded document question answering: refine, retrieve, assemble a CO-STAR
/// prompt, generate, validate and regenerate within a cap.
namespace esap::derek {

struct Persona {
    std::string objective = "Answer strictly from the provided context and cite the supporting snippets.";
    std::string style = "Concise and professional.";
    std::string tone = "Neutral.";
    std::string audience = "Business analyst.";
    std::string response = "Short paragraphs; cite snippets with [n] markers.";
    bool strict = false; ///< also require the answer to share a token with the question

    static Persona from_json(const json& j) {
        Persona p;
        for (const auto& [key, value] : j.items()) {
            if (key == "objective") p.objective = value.get<std::string>();
            else if (key == "style") p.style = value.get<std::string>();
            else if (key == "tone") p.tone = value.get<std::string>();
            else if (key == "audience") p.audience = value.get<std::string>();
            else if (key == "response") p.response = value.get<std::string>();
            else if (key == "strict") p.strict = value.get<bool>();
            else throw Error(Errc::ConfigError, "persona: unknown key '" + key + "'");
        }
        return p;
    }
};

struct Config {
    std::size_t k = 50;
    std::size_t overfetch = 4;
    std::optional<std::string> principal;
    GuardRules guards = GuardRules::defaults();
    std::size_t max_regenerations = 2;
    double support_threshold = 0.6;
    std::size_t ngram_n = 3;
    Persona persona;
};

struct TraceStage {
    std::string name;
    double duration_ms = 0.0;
    std::string note;
};

/// Per-question pipeline record.
struct QuerySession {
    std::string raw_question;
    std::string refined_question;
    std::optional<std::string> principal;
    std::size_t k = 50;
    ChunkConfig chunk;
    std::vector<TraceStage> stages;
    std::vector<std::string> events; ///< fallbacks, warnings, escalations
    std::size_t regeneration_count = 0;
};

inline json to_json(const QuerySession& s, bool with_timings = true) {
    json stages = json::array();
    for (const auto& st : s.stages) {
        json j{{"stage", st.name}, {"note", st.note}};
        if (with_timings) j["ms"] = st.duration_ms;
        stages.push_back(std::move(j));
    }
    return json{{"question", s.raw_question},
                {"refined_question", s.refined_question},
                {"principal", s.principal ? json(*s.principal) : json(nullptr)},
                {"k", s.k},
                {"chunk", {{"size", s.chunk.size}, {"overlap", s.chunk.overlap}}},
                {"stages", std::move(stages)},
                {"events", s.events},
                {"regeneration_count", s.regeneration_count}};
}

struct Snippet {
    std::size_t number = 0; ///< 1-based
    std::string chunk_id;
    std::string doc_id;
    std::uint32_t version = 0;
    std::string text;
};

struct CoStarPrompt {
    std::vector<Snippet> context;
    std::string objective, style, tone, audience, response;
    std::string question;

    /// Bit-exact layout:
    /// # CONTEXT / [n] snippet ... / # OBJECTIVE / # STYLE / # TONE / # AUDIENCE / # RESPONSE / QUESTION: q
    std::string render() const {
        std::string out = "# CONTEXT\n";
        for (const auto& s : context) out += "[" + std::to_string(s.number) + "] " + s.text + "\n";
        out += "# OBJECTIVE\n" + objective + "\n";
        out += "# STYLE\n" + style + "\n";
        out += "# TONE\n" + tone + "\n";
        out += "# AUDIENCE\n" + audience + "\n";
        out += "# RESPONSE\n" + response + "\n";
        out += "QUESTION: " + question;
        return out;
    }

    const Snippet* snippet(std::size_t number) const {
        if (number == 0 || number > context.size()) return nullptr;
        return &context[number - 1];
    }
};

struct Citation {
    std::size_t snippet = 0;
    std::string chunk_id;
    std::string doc_id;
    std::uint32_t version = 0;

    bool operator==(const Citation&) const = default;
};

struct Verdict {
    bool sufficient = false;
    std::string reason; ///< empty when sufficient

    bool operator==(const Verdict&) const = default;
};

struct Draft {
    std::string raw;  ///< model output
    std::string text; ///< citation markers removed
    std::vector<Citation> citations;
    std::vector<std::string> warnings;
};

struct GroundedAnswer {
    std::string text;
    std::vector<Citation> citations;
    Verdict verdict;
    std::size_t regeneration_count = 0;
    bool escalated = false; ///< web-search hook fired after the regeneration cap

    bool operator==(const GroundedAnswer&) const = default;
};

inline json to_json(const GroundedAnswer& a) {
    json cites = json::array();
    for (const auto& c : a.citations) {
        cites.push_back({{"snippet", c.snippet}, {"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"version", c.version}});
    }
    return json{{"answer", a.text},
                {"citations", std::move(cites)},
                {"verdict", a.verdict.sufficient ? "sufficient" : "insufficient"},
                {"verdict_reason", a.verdict.reason},
                {"regeneration_count", a.regeneration_count},
                {"escalated", a.escalated}};
}

namespace detail {

class StageTimer {
public:
    StageTimer(QuerySession& s, std::string name) : session_(s), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    void finish(std::string note = {}) {
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        session_.stages.push_back({name_, ms, std::move(note)});
    }

private:
    QuerySession& session_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

inline std::string one_line(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (c == '\n' || c == '\r' || c == '\t' || c == ' ') {
            space = true;
        } else {
            if (space && !out.empty()) out.push_back(' ');
            space = false;
            out.push_back(c);
        }
    }
    return out;
}

} // namespace detail

/// Rewrites the question through the chat port. Port failures and empty
/// rewrites fall back to the original question.
inline std::string refine_query(const std::string& question, ChatModel& chat, QuerySession* session = nullptr) {
    if (text::trim(question).empty()) throw Error(Errc::ConfigError, "question must not be empty");
    try {
        auto r = chat.chat(make_request(prompts::kRefine, question));
        auto refined = text::trim(r.text);
        if (!refined.empty()) return refined;
        if (session) session->events.push_back("refine_fallback: empty rewrite");
    } catch (const Error& e) {
        if (session) session->events.push_back("refine_fallback: " + std::string(e.name()));
    }
    return question;
}

inline CoStarPrompt assemble_costar(const std::string& question, const std::vector<Hit>& hits, const Persona& persona) {
    if (hits.empty()) throw Error(Errc::NoContext, "no retrieved context to answer from");
    CoStarPrompt p;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        p.context.push_back({i + 1, hits[i].chunk_id, hits[i].doc_id, hits[i].version, detail::one_line(hits[i].text)});
    }
    p.objective = persona.objective;
    p.style = persona.style;
    p.tone = persona.tone;
    p.audience = persona.audience;
    p.response = persona.response;
    p.question = detail::one_line(question);
    return p;
}

/// Extracts `[n]` markers. Markers naming a snippet outside the prompt are
/// dropped with a warning; every marker is removed from the answer text.
inline Draft parse_draft(const std::string& raw, const CoStarPrompt& prompt) {
    Draft d;
    d.raw = raw;
    std::string out;
    std::set<std::size_t> seen;
    std::size_t i = 0;
    while (i < raw.size()) {
        if (raw[i] == '[') {
            std::size_t j = i + 1;
            while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
            if (j > i + 1 && j < raw.size() && raw[j] == ']' && j - i - 1 <= 6) {
                const auto n = static_cast<std::size_t>(std::stoul(raw.substr(i + 1, j - i - 1)));
                if (const Snippet* s = prompt.snippet(n)) {
                    if (seen.insert(n).second) d.citations.push_back({n, s->chunk_id, s->doc_id, s->version});
                } else {
                    d.warnings.push_back("citation [" + std::to_string(n) + "] out of range");
                }
                while (!out.empty() && out.back() == ' ') out.pop_back();
                i = j + 1;
                continue;
            }
        }
        out.push_back(raw[i++]);
    }
    d.text = text::trim(out);
    return d;
}

inline Draft generate(const CoStarPrompt& prompt, ChatModel& chat, const std::vector<ChatMessage>& feedback = {}) {
    auto req = make_request(prompts::kAnswer, prompt.render());
    for (const auto& m : feedback) req.messages.push_back(m);
    return parse_draft(chat.chat(req).text, prompt);
}

inline std::size_t question_overlap(std::string_view answer, std::string_view question) {
    return esap::detail::token_overlap(token_texts(answer), token_texts(question));
}

/// Two checks; insufficient if either fails:
///  (a) heuristic: at least one valid citation and supported-token fraction
///      against the snippets at or above the threshold (strict personas also
///      need a token shared with the question);
///  (b) model critique through the chat port, consulted only when (a) passes.
///      A failing port leaves the heuristic verdict in place.
inline Verdict validate(const Draft& draft, const CoStarPrompt& prompt, ChatModel& chat, const Config& cfg,
                        QuerySession* session = nullptr) {
    if (draft.citations.empty()) return {false, "no-citation"};
    std::vector<std::string> ctx;
    for (const auto& s : prompt.context) ctx.push_back(s.text);
    const double support = supported_fraction(draft.text, ctx, cfg.ngram_n);
    if (support < cfg.support_threshold) return {false, "unsupported"};
    if (cfg.persona.strict && question_overlap(draft.text, prompt.question) == 0) return {false, "off-topic"};

    std::string req = "QUESTION: " + prompt.question + "\n# CONTEXT\n";
    for (const auto& s : prompt.context) req += "[" + std::to_string(s.number) + "] " + s.text + "\n";
    req += "ANSWER: " + detail::one_line(draft.text);
    try {
        const auto verdict = text::to_lower_ascii(text::trim(chat.chat(make_request(prompts::kCritique, req)).text));
        if (verdict.find("insufficient") != std::string::npos) return {false, "critique"};
        if (verdict.find("sufficient") != std::string::npos) return {true, {}};
        return {false, "critique-unparseable"};
    } catch (const Error& e) {
        if (session) session->events.push_back("critique_unavailable: " + std::string(e.name()));
        return {true, {}};
    }
}

/// Called once when regeneration is exhausted; the default records the event only.
using EscalationHook = std::function<void(const QuerySession&)>;

struct Outcome {
    GroundedAnswer answer;
    QuerySession session;
    RetrievalResult retrieval;
    std::optional<CoStarPrompt> prompt;
};

inline json to_json(const Outcome& o, bool with_timings = true) {
    json j = to_json(o.answer);
    j["trace"] = to_json(o.session, with_timings);
    j["retrieval"] = to_json(o.retrieval);
    return j;
}

/// Full pipeline. Deterministic under stub ports; no state survives the call.
inline Outcome answer(const std::string& question, const HybridIndex& index, Embedder& embedder, ChatModel& chat,
                      const Config& cfg, const EscalationHook& escalate = {}) {
    if (index.empty()) throw Error(Errc::EmptyIndex, "index holds no chunks");
    Outcome out;
    QuerySession& s = out.session;
    s.raw_question = question;
    s.principal = cfg.principal;
    s.k = cfg.k;
    s.chunk = index.params().chunk;

    {
        detail::StageTimer t(s, "refine");
        s.refined_question = refine_query(question, chat, &s);
        t.finish(s.refined_question == question ? "unchanged" : "rewritten");
    }
    {
        detail::StageTimer t(s, "retrieve");
        RetrieveOptions ro;
        ro.k = cfg.k;
        ro.overfetch = cfg.overfetch;
        ro.principal = cfg.principal;
        ro.guards = &cfg.guards;
        out.retrieval = index.retrieve(s.refined_question, embedder, ro);
        t.finish(std::to_string(out.retrieval.hits.size()) + " hits");
    }
    {
        detail::StageTimer t(s, "assemble");
        try {
            out.prompt = assemble_costar(s.refined_question, out.retrieval.hits, cfg.persona);
            t.finish(std::to_string(out.prompt->context.size()) + " snippets");
        } catch (const Error& e) {
            if (e.code() != Errc::NoContext) throw;
            t.finish("no context");
            out.answer.verdict = {false, "no-context"};
            return out;
        }
    }

    const CoStarPrompt& prompt = *out.prompt;
    std::optional<Draft> best;
    std::optional<Verdict> best_verdict;
    double best_support = -1.0;
    std::optional<Error> last_error;
    std::vector<ChatMessage> feedback;
    std::vector<std::string> ctx;
    for (const auto& sn : prompt.context) ctx.push_back(sn.text);

    for (std::size_t attempt = 0; attempt <= cfg.max_regenerations; ++attempt) {
        if (attempt > 0) s.regeneration_count = attempt;
        std::optional<Draft> draft;
        {
            detail::StageTimer t(s, "generate");
            try {
                draft = generate(prompt, chat, feedback);
                for (const auto& w : draft->warnings) s.events.push_back("generate_warning: " + w);
                t.finish(std::to_string(draft->citations.size()) + " citations");
            } catch (const Error& e) {
                last_error = e;
                t.finish(std::string("error: ") + std::string(e.name()));
            }
        }
        Verdict v{false, "generation-error"};
        {
            detail::StageTimer t(s, "validate");
            if (draft) v = validate(*draft, prompt, chat, cfg, &s);
            t.finish(v.sufficient ? "sufficient" : "insufficient: " + v.reason);
        }
        if (draft) {
            const double support = draft->citations.empty() ? 0.0 : supported_fraction(draft->text, ctx, cfg.ngram_n);
            const bool better = !best || (v.sufficient && !best_verdict->sufficient) ||
                                (v.sufficient == best_verdict->sufficient && support > best_support);
            if (better) {
                best = draft;
                best_verdict = v;
                best_support = support;
            }
            if (v.sufficient) break;
            feedback = {{"assistant", draft->raw},
                        {"user", std::string(prompts::kRegenerate) + " Reason: " + v.reason + "."}};
        }
    }

    if (!best) throw *last_error;
    out.answer.text = best->text;
    out.answer.citations = best->citations;
    out.answer.verdict = *best_verdict;
    out.answer.regeneration_count = s.regeneration_count;
    if (!best_verdict->sufficient) {
        out.answer.escalated = true;
        s.events.push_back("web_search_escalation: hook invoked, no external search configured");
        if (escalate) escalate(s);
    }
    return out;
}

} // namespace esap::derek
