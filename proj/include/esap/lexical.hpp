#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "esap/binio.hpp"
#include "esap/corpus.hpp"
#include "esap/error.hpp"
#include "esap/text.hpp"

namespace esap {

/// A chunk ordinal with a score. Ordinals index the chunk table of the owning index.
struct Scored {
    std::uint32_t ordinal = 0;
    double score = 0.0;

    bool operator==(const Scored&) const = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// BM25 inverted index.
///
///   score(q, d) = sum over distinct query terms t of
///                 idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
///   idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
///
/// Ordinals follow the chunk order given to build(); callers pass chunks
/// sorted by chunk_id so ordinal order is chunk_id order.
class LexicalIndex {
public:
    struct Posting {
        std::uint32_t ordinal;
        std::uint32_t tf;
    };

    LexicalIndex() = default;

    static LexicalIndex build(std::span<const Chunk> chunks, Bm25Params params = {}) {
        if (chunks.empty()) throw Error(Errc::EmptyCorpus, "cannot build a lexical index over zero chunks");
        LexicalIndex idx;
        idx.params_ = params;
        idx.lengths_.reserve(chunks.size());
        double total = 0.0;
        for (std::uint32_t i = 0; i < chunks.size(); ++i) {
            std::map<std::string, std::uint32_t> tf;
            const auto toks = tokenize(chunks[i].text);
            for (const auto& t : toks) ++tf[t.text];
            for (const auto& [term, n] : tf) idx.postings_[term].push_back({i, n});
            idx.lengths_.push_back(static_cast<std::uint32_t>(toks.size()));
            total += static_cast<double>(toks.size());
        }
        idx.avgdl_ = total / static_cast<double>(chunks.size());
        return idx;
    }

    std::size_t size() const noexcept { return lengths_.size(); }
    double avgdl() const noexcept { return avgdl_; }
    const Bm25Params& params() const noexcept { return params_; }
    const std::vector<std::uint32_t>& chunk_lengths() const noexcept { return lengths_; }
    const std::map<std::string, std::vector<Posting>>& postings() const noexcept { return postings_; }

    std::size_t df(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

    double idf(const std::string& term) const {
        const double n = static_cast<double>(size());
        const double d = static_cast<double>(df(term));
        return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
    }

    /// Distinct query terms in sorted order.
    static std::vector<std::string> query_terms(std::string_view query) {
        auto terms = token_texts(query);
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
        return terms;
    }

    /// Scores every chunk containing at least one query term, ranked by
    /// score descending then ordinal ascending, truncated to k.
    std::vector<Scored> search(std::string_view query, std::size_t k) const {
        std::vector<Scored> out;
        if (k == 0) return out;
        std::map<std::uint32_t, double> acc;
        const double k1 = params_.k1, b = params_.b;
        for (const auto& term : query_terms(query)) {
            auto it = postings_.find(term);
            if (it == postings_.end()) continue;
            const double w = idf(term);
            for (const auto& p : it->second) {
                const double tf = p.tf;
                const double norm = k1 * (1.0 - b + b * lengths_[p.ordinal] / avgdl_);
                acc[p.ordinal] += w * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        out.reserve(acc.size());
        for (auto [ord, s] : acc) out.push_back({ord, s});
        const auto cmp = [](const Scored& x, const Scored& y) {
            return x.score != y.score ? x.score > y.score : x.ordinal < y.ordinal;
        };
        if (out.size() > k) {
            std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(), cmp);
            out.resize(k);
        } else {
            std::sort(out.begin(), out.end(), cmp);
        }
        return out;
    }

    void serialize(binio::Writer& w) const {
        w.put(params_.k1);
        w.put(params_.b);
        w.put(avgdl_);
        w.put_vector(lengths_);
        w.put<std::uint64_t>(postings_.size());
        for (const auto& [term, list] : postings_) {
            w.put_string(term);
            w.put<std::uint64_t>(list.size());
            for (const auto& p : list) {
                w.put(p.ordinal);
                w.put(p.tf);
            }
        }
    }

    static LexicalIndex deserialize(binio::Reader& r) {
        LexicalIndex idx;
        idx.params_.k1 = r.get<double>();
        idx.params_.b = r.get<double>();
        idx.avgdl_ = r.get<double>();
        idx.lengths_ = r.get_vector<std::uint32_t>();
        const auto nterms = r.get<std::uint64_t>();
        for (std::uint64_t i = 0; i < nterms; ++i) {
            auto term = r.get_string();
            const auto n = r.get<std::uint64_t>();
            auto& list = idx.postings_[term];
            for (std::uint64_t j = 0; j < n; ++j) {
                Posting p{r.get<std::uint32_t>(), r.get<std::uint32_t>()};
                if (p.ordinal >= idx.lengths_.size()) throw Error(Errc::CorruptIndex, "posting ordinal out of range");
                list.push_back(p);
            }
        }
        return idx;
    }

private:
    Bm25Params params_;
    double avgdl_ = 0.0;
    std::vector<std::uint32_t> lengths_;
    std::map<std::string, std::vector<Posting>> postings_;
};

} // namespace esap
