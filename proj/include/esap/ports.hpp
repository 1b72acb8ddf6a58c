#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "esap/error.hpp"
#include "esap/prompts.hpp"
#include "esap/text.hpp"

namespace esap {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Chat completion
// ---------------------------------------------------------------------------

struct ChatMessage {
    std::string role; ///< "system", "user" or "assistant"
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_tokens = 1024;
    std::string model;

    std::string_view system() const {
        for (const auto& m : messages) {
            if (m.role == "system") return m.content;
        }
        return {};
    }

    /// First user message.
    std::string_view user() const {
        for (const auto& m : messages) {
            if (m.role == "user") return m.content;
        }
        return {};
    }
};

struct ChatResponse {
    std::string text;
    std::string finish_reason = "complete";
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

inline void to_json(json& j, const ChatMessage& m) { j = json{{"role", m.role}, {"content", m.content}}; }

inline void to_json(json& j, const ChatRequest& r) {
    j = json{{"model", r.model}, {"messages", r.messages}, {"temperature", r.temperature}, {"max_tokens", r.max_tokens}};
}

inline std::size_t count_prompt_tokens(const ChatRequest& req) {
    std::size_t n = 0;
    for (const auto& m : req.messages) n += tokenize(m.content).size();
    return n;
}

/// Chat-completion port. Implementations return only complete responses and
/// throw ModelRefusal / TransportError / ScriptExhausted otherwise.
class ChatModel {
public:
    virtual ~ChatModel() = default;
    virtual ChatResponse chat(const ChatRequest& request) = 0;
};

inline ChatRequest make_request(std::string_view system, std::string user) {
    if (user.empty()) user = " ";
    ChatRequest r;
    r.messages.push_back({"system", std::string(system)});
    r.messages.push_back({"user", std::move(user)});
    return r;
}

/// Replays a fixed queue of responses.
///
/// An entry with `match` set is only eligible for requests whose concatenated
/// message text contains that substring; the first eligible entry in queue
/// order is consumed. `finish_reason` other than "complete" raises ModelRefusal,
/// `error: "transport"` raises TransportError.
class ScriptedModel final : public ChatModel {
public:
    struct Entry {
        std::string content;
        std::optional<std::string> match;
        std::string finish_reason = "complete";
        std::optional<std::string> error;
    };

    struct Exchange {
        ChatRequest request;
        std::string response;
    };

    ScriptedModel() = default;
    ScriptedModel(ScriptedModel&& other) noexcept {
        std::lock_guard lock(other.mutex_);
        queue_ = std::move(other.queue_);
        transcript_ = std::move(other.transcript_);
    }
    explicit ScriptedModel(std::vector<Entry> entries) : queue_(entries.begin(), entries.end()) {}
    explicit ScriptedModel(std::initializer_list<std::string> responses) {
        for (const auto& r : responses) {
            Entry e;
            e.content = r;
            queue_.push_back(std::move(e));
        }
    }

    /// Accepts `["a", "b"]`, `[{"content": ..., "match": ...}]` or `{"responses": [...]}`.
    static ScriptedModel from_json(const json& j) {
        const json& arr = j.is_object() ? j.at("responses") : j;
        if (!arr.is_array()) throw Error(Errc::ConfigError, "script must be an array of responses");
        std::vector<Entry> entries;
        for (const auto& e : arr) {
            Entry en;
            if (e.is_string()) {
                en.content = e.get<std::string>();
            } else if (e.is_object()) {
                en.content = e.value("content", std::string());
                if (e.contains("match")) en.match = e["match"].get<std::string>();
                en.finish_reason = e.value("finish_reason", std::string("complete"));
                if (e.contains("error")) en.error = e["error"].get<std::string>();
            } else {
                throw Error(Errc::ConfigError, "script entries must be strings or objects");
            }
            entries.push_back(std::move(en));
        }
        return ScriptedModel(std::move(entries));
    }

    static ScriptedModel from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(Errc::ConfigError, "cannot open script " + path.string());
        try {
            return from_json(json::parse(in));
        } catch (const json::exception& e) {
            throw Error(Errc::ConfigError, "invalid script " + path.string() + ": " + e.what());
        }
    }

    ChatResponse chat(const ChatRequest& request) override {
        std::lock_guard lock(mutex_);
        std::string all;
        for (const auto& m : request.messages) all += m.content + "\n";
        auto it = std::find_if(queue_.begin(), queue_.end(), [&](const Entry& e) {
            return !e.match || all.find(*e.match) != std::string::npos;
        });
        if (it == queue_.end()) {
            throw Error(Errc::ScriptExhausted, "script exhausted after " + std::to_string(transcript_.size()) + " calls");
        }
        Entry e = *it;
        queue_.erase(it);
        transcript_.push_back({request, e.content});
        if (e.error) throw Error(Errc::TransportError, "scripted transport failure: " + *e.error);
        if (e.finish_reason != "complete") {
            throw Error(Errc::ModelRefusal, "model finished with '" + e.finish_reason + "'");
        }
        ChatResponse r;
        r.text = e.content;
        r.prompt_tokens = count_prompt_tokens(request);
        r.completion_tokens = tokenize(r.text).size();
        return r;
    }

    std::size_t remaining() const {
        std::lock_guard lock(mutex_);
        return queue_.size();
    }

    std::vector<Exchange> transcript() const {
        std::lock_guard lock(mutex_);
        return transcript_;
    }

private:
    mutable std::mutex mutex_;
    std::deque<Entry> queue_;
    std::vector<Exchange> transcript_;
};

namespace detail {

/// Numbered context snippets from a prompt section starting with "# CONTEXT".
inline std::vector<std::pair<int, std::string>> parse_context_block(std::string_view prompt) {
    std::vector<std::pair<int, std::string>> out;
    const auto lines = text::split_lines(prompt);
    bool in_ctx = false;
    for (const auto& line : lines) {
        if (line == "# CONTEXT") {
            in_ctx = true;
            continue;
        }
        if (!in_ctx) continue;
        if (line.rfind("# ", 0) == 0 || line.rfind("ANSWER:", 0) == 0 || line.rfind("QUESTION:", 0) == 0) break;
        if (line.size() > 2 && line[0] == '[') {
            const auto close = line.find("] ");
            if (close != std::string::npos) {
                try {
                    out.emplace_back(std::stoi(line.substr(1, close - 1)), line.substr(close + 2));
                    continue;
                } catch (const std::exception&) {
                }
            }
        }
        if (!out.empty()) out.back().second += "\n" + line;
    }
    return out;
}

inline std::string line_value(std::string_view prompt, std::string_view key) {
    for (const auto& line : text::split_lines(prompt)) {
        if (line.rfind(key, 0) == 0) return text::trim(std::string_view(line).substr(key.size()));
    }
    return {};
}

inline std::string section_body(std::string_view prompt, std::string_view header) {
    const auto lines = text::split_lines(prompt);
    std::string out;
    bool in = false;
    for (const auto& line : lines) {
        if (line == header) {
            in = true;
            continue;
        }
        if (in && line.rfind("# ", 0) == 0) break;
        if (in) out += (out.empty() ? "" : "\n") + line;
    }
    return out;
}

inline std::size_t token_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::string> sa(a), sb(b);
    std::sort(sa.begin(), sa.end());
    sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
    std::sort(sb.begin(), sb.end());
    sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
    std::vector<std::string> both;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
    return both.size();
}

} // namespace detail

/// Deterministic offline model. Recognizes each fixed task instruction and
/// answers as a pure function of the request:
///  - answering: the context sentence sharing the most distinct tokens with the
///    question (earliest on ties), followed by its snippet marker;
///  - refinement: the question unchanged;
///  - critique: "sufficient" iff the answer shares a token with the question;
///  - routing: keyword classification; rating: "1.0";
///  - interpretation: echoes the templated draft;
///  - SQL generation and anything unrecognized: refusal.
class ExtractiveModel final : public ChatModel {
public:
    ChatResponse chat(const ChatRequest& request) override {
        ChatResponse r;
        r.text = respond(request);
        r.prompt_tokens = count_prompt_tokens(request);
        r.completion_tokens = tokenize(r.text).size();
        return r;
    }

    /// Best-overlap sentence and its 1-based snippet number.
    static std::pair<std::string, int> best_sentence(std::string_view prompt, std::string_view question) {
        const auto q = token_texts(question);
        std::string best;
        int best_snippet = 0;
        std::size_t best_overlap = 0;
        bool have = false;
        for (const auto& [num, snippet] : detail::parse_context_block(prompt)) {
            for (const auto& s : text::split_sentences(snippet)) {
                const auto ov = detail::token_overlap(token_texts(s), q);
                if (!have || ov > best_overlap) {
                    best = s;
                    best_snippet = num;
                    best_overlap = ov;
                    have = true;
                }
            }
        }
        return {best, best_snippet};
    }

private:
    static std::string respond(const ChatRequest& req) {
        const auto sys = req.system();
        const auto user = req.user();
        if (sys == prompts::kRefine) return std::string(user);
        if (sys == prompts::kAnswer) {
            auto [sentence, snippet] = best_sentence(user, detail::line_value(user, "QUESTION:"));
            if (sentence.empty()) refuse("no context");
            return sentence + " [" + std::to_string(snippet) + "]";
        }
        if (sys == prompts::kCritique) {
            const auto q = token_texts(detail::line_value(user, "QUESTION:"));
            const auto a = token_texts(detail::line_value(user, "ANSWER:"));
            return detail::token_overlap(q, a) > 0 ? "sufficient" : "insufficient";
        }
        if (sys == prompts::kRoute) return std::string(prompts::task_name(prompts::classify_by_keywords(user)));
        if (sys == prompts::kRate) return "1.0 result is non-empty";
        if (sys == prompts::kInterpret) {
            auto draft = detail::section_body(user, "# DRAFT");
            if (draft.empty()) refuse("no draft");
            return draft;
        }
        refuse("unsupported task");
    }

    [[noreturn]] static void refuse(const std::string& why) {
        throw Error(Errc::ModelRefusal, "extractive model refused: " + why);
    }
};

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

using Vector = std::vector<float>;

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dim() const = 0;
    /// One vector per input, order preserved. Never returns partial results.
    virtual std::vector<Vector> embed(std::span<const std::string> texts) = 0;
};

/// Signed feature hashing over tokens: each token's FNV-1a hash picks a
/// coordinate (h mod dim) and a sign (top bit set: -1, clear: +1).
/// Non-zero results are L2-normalized; token-free input stays all-zero.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = 256) : dim_(dim) {}

    std::size_t dim() const override { return dim_; }

    Vector embed_one(std::string_view s) const {
        std::vector<double> acc(dim_, 0.0);
        for (const auto& tok : tokenize(s)) {
            const std::uint64_t h = text::fnv1a64(tok.text);
            acc[h % dim_] += (h >> 63) ? -1.0 : 1.0;
        }
        double norm = 0.0;
        for (double v : acc) norm += v * v;
        Vector out(dim_, 0.0f);
        if (norm > 0.0) {
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] / norm);
        }
        return out;
    }

    std::vector<Vector> embed(std::span<const std::string> texts) override {
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

private:
    std::size_t dim_;
};

} // namespace esap
