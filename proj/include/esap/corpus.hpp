#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "esap/error.hpp"
#include "esap/text.hpp"

namespace esap {

using json = nlohmann::json;

/// A stored, immutable document version.
struct Document {
    std::string doc_id;
    std::uint32_t version = 1;
    std::string text;
    std::string mime = "text/plain";
    std::string author;
    std::string created_at;
    std::set<std::string> acl{"*"};

    bool operator==(const Document&) const = default;

    /// True when `principal` may read this document.
    bool readable_by(std::string_view principal) const {
        return acl.count("*") > 0 || acl.count(std::string(principal)) > 0;
    }
};

inline void to_json(json& j, const Document& d) {
    j = json{{"id", d.doc_id},     {"version", d.version}, {"text", d.text},
             {"mime", d.mime},     {"author", d.author},   {"created_at", d.created_at},
             {"acl", std::vector<std::string>(d.acl.begin(), d.acl.end())}};
}

inline void from_json(const json& j, Document& d) {
    d.doc_id = j.at("id").get<std::string>();
    d.version = j.at("version").get<std::uint32_t>();
    d.text = j.at("text").get<std::string>();
    d.mime = j.value("mime", std::string("text/plain"));
    d.author = j.value("author", std::string());
    d.created_at = j.value("created_at", std::string());
    d.acl.clear();
    for (const auto& a : j.value("acl", std::vector<std::string>{})) d.acl.insert(a);
    if (d.acl.empty()) d.acl.insert("*");
}

/// A token window over one document version.
struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::uint32_t version = 1;
    std::size_t token_begin = 0; ///< half-open token indices
    std::size_t token_end = 0;
    std::string text;

    std::size_t size_tokens() const noexcept { return token_end - token_begin; }
    bool operator==(const Chunk&) const = default;
};

inline std::string make_chunk_id(std::string_view doc_id, std::uint32_t version, std::size_t ordinal) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "#v%u#%06zu", version, ordinal);
    return std::string(doc_id) + buf;
}

struct ChunkConfig {
    std::size_t size = 1000;
    std::size_t overlap = 150;
};

inline void validate(const ChunkConfig& cfg) {
    if (cfg.size == 0) throw Error(Errc::InvalidChunkConfig, "chunk size must be positive");
    if (cfg.overlap >= cfg.size) {
        throw Error(Errc::InvalidChunkConfig, "overlap " + std::to_string(cfg.overlap) +
                                                  " must be smaller than chunk size " +
                                                  std::to_string(cfg.size));
    }
}

/// Half-open token windows for `token_count` tokens with stride size - overlap.
inline std::vector<std::pair<std::size_t, std::size_t>> window_spans(std::size_t token_count,
                                                                     const ChunkConfig& cfg) {
    validate(cfg);
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    const std::size_t stride = cfg.size - cfg.overlap;
    for (std::size_t start = 0; start < token_count; start += stride) {
        const std::size_t end = std::min(start + cfg.size, token_count);
        spans.emplace_back(start, end);
        if (end == token_count) break;
    }
    return spans;
}

/// Sliding token windows over a document. Chunk text is the source substring
/// from the first token's start to the last token's end.
inline std::vector<Chunk> chunk_document(const Document& doc, const ChunkConfig& cfg) {
    const auto tokens = tokenize(doc.text);
    std::vector<Chunk> chunks;
    std::size_t ordinal = 0;
    for (auto [b, e] : window_spans(tokens.size(), cfg)) {
        Chunk c;
        c.chunk_id = make_chunk_id(doc.doc_id, doc.version, ordinal++);
        c.doc_id = doc.doc_id;
        c.version = doc.version;
        c.token_begin = b;
        c.token_end = e;
        c.text = doc.text.substr(tokens[b].begin, tokens[e - 1].end - tokens[b].begin);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

inline std::vector<Chunk> chunk_document(const Document& doc, std::size_t size, std::size_t overlap) {
    return chunk_document(doc, ChunkConfig{size, overlap});
}

/// Raw input record for ingestion (one JSONL line).
struct RawDocument {
    std::string doc_id;
    std::string text;
    std::string mime = "text/plain";
    std::string author;
    std::string created_at;
    std::set<std::string> acl;
};

inline bool valid_doc_id(std::string_view id) {
    if (id.empty() || id.size() > 200 || id.front() == '.') return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
               c == '_' || c == '-' || c == '.';
    });
}

/// Parses one corpus JSONL object. Unknown keys are ignored.
inline RawDocument parse_raw_document(const json& j) {
    if (!j.is_object()) throw Error(Errc::InvalidDocument, "expected a JSON object");
    RawDocument r;
    if (!j.contains("id") || !j["id"].is_string()) throw Error(Errc::InvalidDocument, "missing string key 'id'");
    if (!j.contains("text") || !j["text"].is_string()) throw Error(Errc::InvalidDocument, "missing string key 'text'");
    r.doc_id = j["id"].get<std::string>();
    r.text = j["text"].get<std::string>();
    if (j.contains("mime") && j["mime"].is_string()) r.mime = j["mime"].get<std::string>();
    if (j.contains("author") && j["author"].is_string()) r.author = j["author"].get<std::string>();
    if (j.contains("created_at") && j["created_at"].is_string()) r.created_at = j["created_at"].get<std::string>();
    if (j.contains("acl")) {
        if (!j["acl"].is_array()) throw Error(Errc::InvalidDocument, "'acl' must be an array of strings");
        for (const auto& a : j["acl"]) {
            if (!a.is_string()) throw Error(Errc::InvalidDocument, "'acl' must be an array of strings");
            r.acl.insert(a.get<std::string>());
        }
    }
    return r;
}

/// Reads a corpus JSONL file. Errors carry the 1-based line number.
inline std::vector<RawDocument> read_corpus_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidDocument, "cannot open corpus file " + path.string());
    std::vector<RawDocument> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(parse_raw_document(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(Errc::InvalidDocument, "line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(Errc::InvalidDocument, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Line-based unified diff. Empty string when both texts are identical.
inline std::string unified_diff(std::string_view a, std::string_view b, std::string_view label_a = "a",
                                std::string_view label_b = "b") {
    if (a == b) return {};
    const auto la = text::split_lines(a);
    const auto lb = text::split_lines(b);
    const std::size_t n = la.size(), m = lb.size();
    std::vector<std::vector<std::uint32_t>> lcs(n + 1, std::vector<std::uint32_t>(m + 1, 0));
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = m; j-- > 0;) {
            lcs[i][j] = la[i] == lb[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
        }
    }
    std::ostringstream out;
    out << "--- " << label_a << "\n+++ " << label_b << "\n";
    std::size_t i = 0, j = 0;
    while (i < n || j < m) {
        if (i < n && j < m && la[i] == lb[j]) {
            out << ' ' << la[i] << '\n';
            ++i;
            ++j;
        } else if (j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j])) {
            out << '+' << lb[j++] << '\n';
        } else {
            out << '-' << la[i++] << '\n';
        }
    }
    return out.str();
}

/// Filesystem-backed, append-only document store:
///   <kb>/docs/<doc_id>/<version>.json and <kb>/audit.log
/// Single writer, many readers; writes are serialized per store instance.
class VersionStore {
public:
    explicit VersionStore(std::filesystem::path kb) : kb_(std::move(kb)) {}

    const std::filesystem::path& root() const noexcept { return kb_; }

    /// Stores `raw` as the next version of its doc_id and appends an audit record.
    Document ingest(const RawDocument& raw) {
        if (!valid_doc_id(raw.doc_id)) throw Error(Errc::InvalidDocument, "malformed doc_id '" + raw.doc_id + "'");
        std::unique_lock lock(mutex_);
        Document d;
        d.doc_id = raw.doc_id;
        d.version = latest_version_unlocked(raw.doc_id).value_or(0) + 1;
        d.text = raw.text;
        d.mime = raw.mime;
        d.author = raw.author;
        d.created_at = raw.created_at.empty() ? utc_timestamp() : raw.created_at;
        d.acl = raw.acl.empty() ? std::set<std::string>{"*"} : raw.acl;
        write_version(d);
        append_audit("ingest", d.doc_id, d.version);
        return d;
    }

    /// Creates a new version carrying the text of `target_version`.
    Document rollback(const std::string& doc_id, std::uint32_t target_version) {
        std::unique_lock lock(mutex_);
        const Document target = read_unlocked(doc_id, target_version);
        Document d = target;
        d.version = latest_version_unlocked(doc_id).value_or(0) + 1;
        write_version(d);
        append_audit("rollback", d.doc_id, d.version);
        return d;
    }

    Document get(const std::string& doc_id, std::uint32_t version) const {
        std::shared_lock lock(mutex_);
        return read_unlocked(doc_id, version);
    }

    std::optional<std::uint32_t> latest_version(const std::string& doc_id) const {
        std::shared_lock lock(mutex_);
        return latest_version_unlocked(doc_id);
    }

    Document latest(const std::string& doc_id) const {
        std::shared_lock lock(mutex_);
        auto v = latest_version_unlocked(doc_id);
        if (!v) throw Error(Errc::VersionNotFound, "no versions for '" + doc_id + "'");
        return read_unlocked(doc_id, *v);
    }

    std::vector<std::string> doc_ids() const {
        std::shared_lock lock(mutex_);
        std::vector<std::string> ids;
        const auto dir = kb_ / "docs";
        if (!std::filesystem::exists(dir)) return ids;
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            if (e.is_directory()) ids.push_back(e.path().filename().string());
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    /// Latest version of every document, ordered by doc_id.
    std::vector<Document> latest_documents() const {
        std::vector<Document> out;
        for (const auto& id : doc_ids()) out.push_back(latest(id));
        return out;
    }

    std::string diff(const std::string& doc_id, std::uint32_t from, std::uint32_t to) const {
        const auto a = get(doc_id, from);
        const auto b = get(doc_id, to);
        return unified_diff(a.text, b.text, doc_id + "@v" + std::to_string(from),
                            doc_id + "@v" + std::to_string(to));
    }

    std::filesystem::path version_path(const std::string& doc_id, std::uint32_t version) const {
        return kb_ / "docs" / doc_id / (std::to_string(version) + ".json");
    }

    std::filesystem::path audit_path() const { return kb_ / "audit.log"; }

private:
    std::optional<std::uint32_t> latest_version_unlocked(const std::string& doc_id) const {
        const auto dir = kb_ / "docs" / doc_id;
        if (!std::filesystem::exists(dir)) return std::nullopt;
        std::uint32_t best = 0;
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            if (e.path().extension() != ".json") continue;
            try {
                best = std::max<std::uint32_t>(best, static_cast<std::uint32_t>(std::stoul(e.path().stem().string())));
            } catch (const std::exception&) {
            }
        }
        if (best == 0) return std::nullopt;
        return best;
    }

    Document read_unlocked(const std::string& doc_id, std::uint32_t version) const {
        const auto p = version_path(doc_id, version);
        std::ifstream in(p);
        if (!valid_doc_id(doc_id) || !in) {
            throw Error(Errc::VersionNotFound, "version " + std::to_string(version) + " of '" + doc_id + "' not found");
        }
        try {
            return json::parse(in).get<Document>();
        } catch (const json::exception& e) {
            throw Error(Errc::StoreWriteError, "corrupt version file " + p.string() + ": " + e.what());
        }
    }

    void write_version(const Document& d) {
        namespace fs = std::filesystem;
        const auto p = version_path(d.doc_id, d.version);
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw Error(Errc::StoreWriteError, "cannot create " + p.parent_path().string() + ": " + ec.message());
        if (fs::exists(p)) throw Error(Errc::StoreWriteError, "refusing to overwrite " + p.string());
        const auto tmp = p.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << json(d).dump() << '\n';
            if (!out) throw Error(Errc::StoreWriteError, "write failed for " + tmp);
        }
        fs::rename(tmp, p, ec);
        if (ec) throw Error(Errc::StoreWriteError, "rename failed for " + p.string() + ": " + ec.message());
    }

    void append_audit(std::string_view op, const std::string& doc_id, std::uint32_t version) {
        std::ofstream out(audit_path(), std::ios::app);
        json rec{{"op", op}, {"doc_id", doc_id}, {"version", version}, {"timestamp", utc_timestamp()}};
        out << rec.dump() << '\n';
        if (!out) throw Error(Errc::StoreWriteError, "audit append failed");
    }

    std::filesystem::path kb_;
    mutable std::shared_mutex mutex_;
};

} // namespace esap
