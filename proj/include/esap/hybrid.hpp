#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "esap/binio.hpp"
#include "esap/corpus.hpp"
#include "esap/dense.hpp"
#include "esap/lexical.hpp"
#include "esap/ports.hpp"
#include "esap/retrieval.hpp"

namespace esap {

inline constexpr std::uint32_t kIndexFormatVersion = 1;

struct IndexParams {
    Bm25Params bm25;
    AnnParams ann;
    ChunkConfig chunk;
    double rrf_c = 60.0;
};

struct RetrieveOptions {
    std::size_t k = 50;
    std::size_t overfetch = 4;               ///< each retriever fetches overfetch * k candidates
    std::optional<std::string> principal;    ///< no ACL filter when unset
    const GuardRules* guards = nullptr;
};

/// Immutable BM25 + dense index over one chunk set. Chunk ordinals are the
/// positions in the chunk table, which is sorted by chunk_id.
class HybridIndex {
public:
    HybridIndex() = default;

    /// Chunks every document, embeds every chunk and builds both indexes.
    static HybridIndex build(const std::vector<Document>& docs, Embedder& embedder, const IndexParams& params) {
        validate(params.chunk);
        std::vector<Chunk> chunks;
        AclTable acl;
        for (const auto& d : docs) {
            auto cs = chunk_document(d, params.chunk);
            chunks.insert(chunks.end(), std::make_move_iterator(cs.begin()), std::make_move_iterator(cs.end()));
            acl[d.doc_id] = d.acl;
        }
        return build_from_chunks(std::move(chunks), std::move(acl), embedder, params);
    }

    static HybridIndex build_from_chunks(std::vector<Chunk> chunks, AclTable acl, Embedder& embedder,
                                         const IndexParams& params) {
        if (chunks.empty()) throw Error(Errc::EmptyCorpus, "no chunks to index");
        std::sort(chunks.begin(), chunks.end(), [](const Chunk& a, const Chunk& b) { return a.chunk_id < b.chunk_id; });
        HybridIndex idx;
        idx.params_ = params;
        idx.chunks_ = std::move(chunks);
        idx.acl_ = std::move(acl);
        idx.lexical_ = LexicalIndex::build(idx.chunks_, params.bm25);

        const std::size_t dim = embedder.dim();
        std::vector<float> flat;
        flat.reserve(idx.chunks_.size() * dim);
        constexpr std::size_t kBatch = 64;
        for (std::size_t start = 0; start < idx.chunks_.size(); start += kBatch) {
            const std::size_t end = std::min(start + kBatch, idx.chunks_.size());
            std::vector<std::string> texts;
            for (std::size_t i = start; i < end; ++i) texts.push_back(idx.chunks_[i].text);
            std::vector<Vector> vecs;
            try {
                vecs = embedder.embed(texts);
            } catch (const std::exception& e) {
                throw Error(Errc::EmbedderFailure, "embedding failed at chunk " + idx.chunks_[start].chunk_id + ": " + e.what());
            }
            if (vecs.size() != texts.size()) {
                throw Error(Errc::EmbedderFailure, "embedder returned a partial batch at chunk " + idx.chunks_[start].chunk_id);
            }
            for (std::size_t i = 0; i < vecs.size(); ++i) {
                if (vecs[i].size() != dim) {
                    throw Error(Errc::DimensionMismatch, "chunk " + idx.chunks_[start + i].chunk_id + " embedded with dimension " +
                                                             std::to_string(vecs[i].size()));
                }
                flat.insert(flat.end(), vecs[i].begin(), vecs[i].end());
            }
        }
        idx.dense_ = DenseIndex::build(dim, std::move(flat), params.ann);
        return idx;
    }

    std::size_t size() const noexcept { return chunks_.size(); }
    bool empty() const noexcept { return chunks_.empty(); }
    const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
    const Chunk& chunk(std::uint32_t ordinal) const { return chunks_.at(ordinal); }
    const AclTable& acl() const noexcept { return acl_; }
    const LexicalIndex& lexical() const noexcept { return lexical_; }
    const DenseIndex& dense() const noexcept { return dense_; }
    const IndexParams& params() const noexcept { return params_; }

    RetrievalResult search_lexical(std::string_view query, std::size_t k) const {
        RetrievalResult r;
        r.query = std::string(query);
        r.filters = {"lexical"};
        if (empty()) return r;
        for (const auto& s : lexical_.search(query, k)) {
            Hit h = make_hit(s.ordinal);
            h.lexical_score = s.score;
            h.fused_score = s.score;
            r.hits.push_back(std::move(h));
        }
        r.rerank();
        return r;
    }

    RetrievalResult search_dense(std::span<const float> query_vec, std::size_t k, std::string_view query = {}) const {
        RetrievalResult r;
        r.query = std::string(query);
        r.filters = {"dense"};
        if (empty()) return r;
        for (const auto& s : dense_.search(query_vec, k)) {
            Hit h = make_hit(s.ordinal);
            h.dense_score = s.score;
            h.fused_score = s.score;
            r.hits.push_back(std::move(h));
        }
        r.rerank();
        return r;
    }

    /// Hybrid retrieval: over-fetched lexical and dense candidates, RRF fusion,
    /// optional ACL filter, truncation to k, then guard redaction.
    RetrievalResult retrieve(std::string_view query, Embedder& embedder, const RetrieveOptions& opts) const {
        if (empty()) throw Error(Errc::EmptyIndex, "index holds no chunks");
        const std::size_t fetch = std::max<std::size_t>(1, opts.k * std::max<std::size_t>(1, opts.overfetch));
        const std::string q(query);
        auto qv = embedder.embed(std::span<const std::string>(&q, 1));
        if (qv.size() != 1) throw Error(Errc::EmbedderFailure, "embedder returned no query vector");
        auto lex = search_lexical(query, fetch);
        auto den = search_dense(qv.front(), fetch, query);
        auto fused = fuse(lex, den, params_.rrf_c);
        if (opts.principal) fused = filter_acl(fused, *opts.principal, acl_);
        fused.truncate(opts.k);
        if (opts.guards) fused = apply_guards(fused, *opts.guards);
        return fused;
    }

    json meta() const {
        return json{{"format_version", kIndexFormatVersion},
                    {"dim", dense_.dim()},
                    {"k1", params_.bm25.k1},
                    {"b", params_.bm25.b},
                    {"rrf_c", params_.rrf_c},
                    {"ann", {{"m", params_.ann.m}, {"ef_c", params_.ann.ef_construction}, {"ef_s", params_.ann.ef_search}}},
                    {"chunk", {{"size", params_.chunk.size}, {"overlap", params_.chunk.overlap}}}};
    }

    /// Writes meta.json, lexical.bin and dense.bin under `dir`.
    void save(const std::filesystem::path& dir) const {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw Error(Errc::StoreWriteError, "cannot create " + dir.string() + ": " + ec.message());

        binio::Writer lw;
        lw.put<std::uint64_t>(chunks_.size());
        for (const auto& c : chunks_) {
            lw.put_string(c.chunk_id);
            lw.put_string(c.doc_id);
            lw.put<std::uint32_t>(c.version);
            lw.put<std::uint64_t>(c.token_begin);
            lw.put<std::uint64_t>(c.token_end);
            lw.put_string(c.text);
        }
        lw.put<std::uint64_t>(acl_.size());
        for (const auto& [doc, principals] : acl_) {
            lw.put_string(doc);
            lw.put<std::uint64_t>(principals.size());
            for (const auto& p : principals) lw.put_string(p);
        }
        lexical_.serialize(lw);
        const auto lex_bytes = binio::seal("ESAPLEX", kIndexFormatVersion, lw.bytes());

        binio::Writer dw;
        dense_.serialize(dw);
        const auto dense_bytes = binio::seal("ESAPDNS", kIndexFormatVersion, dw.bytes());

        binio::write_file(dir / "lexical.bin", lex_bytes);
        binio::write_file(dir / "dense.bin", dense_bytes);
        json m = meta();
        m["exact_threshold"] = params_.ann.exact_threshold;
        m["seed"] = params_.ann.seed;
        m["checksums"] = {{"lexical.bin", text::to_hex(text::fnv1a64(lex_bytes))},
                          {"dense.bin", text::to_hex(text::fnv1a64(dense_bytes))}};
        binio::write_file(dir / "meta.json", m.dump(2) + "\n");
    }

    static HybridIndex load(const std::filesystem::path& dir) {
        json m;
        try {
            m = json::parse(binio::read_file(dir / "meta.json"));
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptIndex, "meta.json: " + std::string(e.what()));
        }
        const auto fv = m.value("format_version", 0u);
        if (fv != kIndexFormatVersion) {
            throw Error(Errc::FormatVersionMismatch, "index format version " + std::to_string(fv) + ", expected " +
                                                         std::to_string(kIndexFormatVersion));
        }
        const auto lex_bytes = binio::read_file(dir / "lexical.bin");
        const auto dense_bytes = binio::read_file(dir / "dense.bin");
        try {
            if (m.at("checksums").at("lexical.bin").get<std::string>() != text::to_hex(text::fnv1a64(lex_bytes))) {
                throw Error(Errc::CorruptIndex, "lexical.bin checksum does not match meta.json");
            }
            if (m.at("checksums").at("dense.bin").get<std::string>() != text::to_hex(text::fnv1a64(dense_bytes))) {
                throw Error(Errc::CorruptIndex, "dense.bin checksum does not match meta.json");
            }
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptIndex, "meta.json: " + std::string(e.what()));
        }

        HybridIndex idx;
        try {
            idx.params_.bm25 = {m.at("k1").get<double>(), m.at("b").get<double>()};
            idx.params_.rrf_c = m.at("rrf_c").get<double>();
            idx.params_.ann.m = m.at("ann").at("m").get<std::size_t>();
            idx.params_.ann.ef_construction = m.at("ann").at("ef_c").get<std::size_t>();
            idx.params_.ann.ef_search = m.at("ann").at("ef_s").get<std::size_t>();
            idx.params_.ann.exact_threshold = m.value("exact_threshold", AnnParams{}.exact_threshold);
            idx.params_.ann.seed = m.value("seed", AnnParams{}.seed);
            idx.params_.chunk = {m.at("chunk").at("size").get<std::size_t>(), m.at("chunk").at("overlap").get<std::size_t>()};
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptIndex, "meta.json: " + std::string(e.what()));
        }

        binio::Reader lr(binio::unseal(lex_bytes, "ESAPLEX", kIndexFormatVersion, "lexical.bin"));
        const auto n = lr.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            Chunk c;
            c.chunk_id = lr.get_string();
            c.doc_id = lr.get_string();
            c.version = lr.get<std::uint32_t>();
            c.token_begin = lr.get<std::uint64_t>();
            c.token_end = lr.get<std::uint64_t>();
            c.text = lr.get_string();
            idx.chunks_.push_back(std::move(c));
        }
        const auto nacl = lr.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < nacl; ++i) {
            auto doc = lr.get_string();
            const auto np = lr.get<std::uint64_t>();
            auto& set = idx.acl_[doc];
            for (std::uint64_t j = 0; j < np; ++j) set.insert(lr.get_string());
        }
        idx.lexical_ = LexicalIndex::deserialize(lr);
        if (!lr.at_end() || idx.lexical_.size() != idx.chunks_.size()) throw Error(Errc::CorruptIndex, "lexical.bin layout");

        binio::Reader dr(binio::unseal(dense_bytes, "ESAPDNS", kIndexFormatVersion, "dense.bin"));
        idx.dense_ = DenseIndex::deserialize(dr);
        if (!dr.at_end() || idx.dense_.size() != idx.chunks_.size()) throw Error(Errc::CorruptIndex, "dense.bin layout");
        if (idx.dense_.dim() != m.value("dim", std::size_t{0})) throw Error(Errc::CorruptIndex, "dimension mismatch with meta.json");
        return idx;
    }

private:
    Hit make_hit(std::uint32_t ordinal) const {
        const Chunk& c = chunks_[ordinal];
        Hit h;
        h.chunk_id = c.chunk_id;
        h.doc_id = c.doc_id;
        h.version = c.version;
        h.token_begin = c.token_begin;
        h.token_end = c.token_end;
        h.text = c.text;
        return h;
    }

    IndexParams params_;
    std::vector<Chunk> chunks_;
    AclTable acl_;
    LexicalIndex lexical_;
    DenseIndex dense_;
};

} // namespace esap
