#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "esap/ports.hpp"

/// Live adapters for OpenAI-compatible chat and embedding endpoints.
namespace esap::http {

struct Endpoint {
    std::string base_url; ///< e.g. https://api.example.com/v1
    std::string api_key;
    std::string model;
    int max_attempts = 3;
    std::chrono::milliseconds backoff{500}; ///< doubled after each failed attempt
    std::chrono::seconds timeout{60};
};

inline std::string env_or(const std::string& name, std::string fallback = {}) {
    if (const char* v = std::getenv(name.c_str()); v && *v) return v;
    return fallback;
}

/// Reads endpoint settings from the named environment variables.
inline Endpoint endpoint_from_env(const std::string& key_var, const std::string& url_var, const std::string& model_var,
                                  std::string default_model) {
    Endpoint e;
    e.api_key = env_or(key_var);
    e.base_url = env_or(url_var, "https://api.openai.com/v1");
    e.model = env_or(model_var, std::move(default_model));
    if (e.api_key.empty()) throw Error(Errc::ConfigError, "environment variable " + key_var + " is not set");
    return e;
}

namespace detail {

struct SplitUrl {
    std::string origin; ///< scheme://host[:port]
    std::string prefix; ///< path prefix without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw Error(Errc::ConfigError, "base URL must include a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    SplitUrl s;
    s.origin = url.substr(0, slash);
    s.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
    return s;
}

/// POSTs JSON with retries; non-2xx, transport errors and malformed bodies are
/// retried. The final failure is raised as TransportError with its text.
inline json post_json(const Endpoint& ep, const std::string& path, const json& body) {
    const auto url = split_url(ep.base_url);
    std::string last_error = "no attempt made";
    auto delay = ep.backoff;
    for (int attempt = 1; attempt <= ep.max_attempts; ++attempt) {
        httplib::Client cli(url.origin);
        cli.set_connection_timeout(ep.timeout);
        cli.set_read_timeout(ep.timeout);
        httplib::Headers headers{{"Authorization", "Bearer " + ep.api_key}};
        auto res = cli.Post(url.prefix + path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
        } else if (res->status < 200 || res->status >= 300) {
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
        } else {
            try {
                return json::parse(res->body);
            } catch (const json::exception& e) {
                last_error = std::string("malformed response: ") + e.what();
            }
        }
        if (attempt < ep.max_attempts) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
    throw Error(Errc::TransportError, last_error);
}

} // namespace detail

class HttpChatModel final : public ChatModel {
public:
    explicit HttpChatModel(Endpoint ep) : ep_(std::move(ep)) {}

    ChatResponse chat(const ChatRequest& request) override {
        json messages = json::array();
        for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
        const json body{{"model", ep_.model}, {"messages", std::move(messages)}, {"temperature", 0}};
        const json reply = detail::post_json(ep_, "/chat/completions", body);
        try {
            const auto& choice = reply.at("choices").at(0);
            const auto finish = choice.value("finish_reason", std::string("stop"));
            if (finish == "content_filter") throw Error(Errc::ModelRefusal, "model output blocked by content filter");
            const auto& msg = choice.at("message");
            if (msg.contains("refusal") && msg["refusal"].is_string()) {
                throw Error(Errc::ModelRefusal, msg["refusal"].get<std::string>());
            }
            ChatResponse r;
            r.text = msg.at("content").is_string() ? msg["content"].get<std::string>() : std::string();
            if (reply.contains("usage")) {
                r.prompt_tokens = reply["usage"].value("prompt_tokens", std::size_t{0});
                r.completion_tokens = reply["usage"].value("completion_tokens", std::size_t{0});
            }
            return r;
        } catch (const json::exception& e) {
            throw Error(Errc::TransportError, std::string("unexpected chat response shape: ") + e.what());
        }
    }

private:
    Endpoint ep_;
};

class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(Endpoint ep, std::size_t dim) : ep_(std::move(ep)), dim_(dim) {}

    std::size_t dim() const override { return dim_; }

    std::vector<Vector> embed(std::span<const std::string> texts) override {
        if (texts.empty()) return {};
        const json body{{"model", ep_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
        json reply;
        try {
            reply = detail::post_json(ep_, "/embeddings", body);
        } catch (const Error& e) {
            throw Error(Errc::EmbedderFailure, e.what());
        }
        std::vector<Vector> out(texts.size());
        try {
            for (const auto& item : reply.at("data")) {
                const auto idx = item.value("index", std::size_t{0});
                if (idx >= out.size()) throw Error(Errc::EmbedderFailure, "embedding index out of range");
                out[idx] = item.at("embedding").get<Vector>();
                if (out[idx].size() != dim_) {
                    throw Error(Errc::DimensionMismatch, "embedding has dimension " + std::to_string(out[idx].size()) +
                                                             ", expected " + std::to_string(dim_));
                }
                double norm = 0.0;
                for (float x : out[idx]) norm += static_cast<double>(x) * x;
                if (norm > 0.0) {
                    const auto inv = static_cast<float>(1.0 / std::sqrt(norm));
                    for (auto& x : out[idx]) x *= inv;
                }
            }
        } catch (const json::exception& e) {
            throw Error(Errc::EmbedderFailure, std::string("unexpected embedding response shape: ") + e.what());
        }
        for (const auto& v : out) {
            if (v.empty()) throw Error(Errc::EmbedderFailure, "embedding response is missing entries");
        }
        return out;
    }

private:
    Endpoint ep_;
    std::size_t dim_;
};

} // namespace esap::http
