#pragma once

/// Independent reference computations used as test oracles. Nothing here
/// calls into the library's scoring, chunking or metric code.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracle {

/// ASCII-only tokenizer: maximal alphanumeric runs, lowercased.
inline std::vector<std::string> ascii_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

/// Counts windows by walking the stride until the tail is covered.
inline std::size_t direct_chunk_count(std::size_t tokens, std::size_t size, std::size_t overlap) {
    if (tokens == 0) return 0;
    std::size_t count = 0;
    for (std::size_t start = 0;; start += size - overlap) {
        ++count;
        if (start + size >= tokens) break;
    }
    return count;
}

/// ceil(max(0, T - size) / stride) + 1.
inline std::size_t formula_chunk_count(std::size_t tokens, std::size_t size, std::size_t overlap) {
    const std::size_t stride = size - overlap;
    const std::size_t rest = tokens > size ? tokens - size : 0;
    return (rest + stride - 1) / stride + 1;
}

struct Bm25Hit {
    std::size_t doc;
    double score;
};

/// Brute-force BM25 over pre-tokenized documents, straight from the formula.
/// Returns documents with a positive term match, ranked by score then index.
inline std::vector<Bm25Hit> bm25(const std::vector<std::vector<std::string>>& docs, const std::vector<std::string>& query,
                                 double k1 = 1.2, double b = 0.75) {
    const double n = static_cast<double>(docs.size());
    double total_len = 0;
    for (const auto& d : docs) total_len += static_cast<double>(d.size());
    const double avgdl = total_len / n;
    std::set<std::string> terms(query.begin(), query.end());
    std::vector<Bm25Hit> hits;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        double score = 0.0;
        bool matched = false;
        for (const auto& t : terms) {
            double df = 0;
            for (const auto& d : docs) df += std::find(d.begin(), d.end(), t) != d.end() ? 1 : 0;
            const double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), t));
            if (tf == 0) continue;
            matched = true;
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * static_cast<double>(docs[i].size()) / avgdl));
        }
        if (matched) hits.push_back({i, score});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const Bm25Hit& x, const Bm25Hit& y) { return x.score > y.score; });
    return hits;
}

/// Brute-force inner-product ranking (ties by index), accumulated in double.
inline std::vector<std::size_t> cosine_rank(const std::vector<std::vector<float>>& vecs, const std::vector<float>& q) {
    std::vector<std::pair<double, std::size_t>> s;
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) d += static_cast<double>(vecs[i][j]) * static_cast<double>(q[j]);
        s.emplace_back(d, i);
    }
    std::stable_sort(s.begin(), s.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    std::vector<std::size_t> out;
    for (const auto& p : s) out.push_back(p.second);
    return out;
}

/// Tokens of `target` lying inside some window of length n that also occurs
/// contiguously in `source`; found by comparing every window pair.
inline std::vector<bool> ngram_support(const std::vector<std::string>& target, const std::vector<std::string>& source,
                                       std::size_t n) {
    std::vector<bool> mask(target.size(), false);
    if (n == 0 || target.size() < n || source.size() < n) return mask;
    for (std::size_t i = 0; i + n <= target.size(); ++i) {
        for (std::size_t j = 0; j + n <= source.size(); ++j) {
            if (std::equal(target.begin() + static_cast<long>(i), target.begin() + static_cast<long>(i + n),
                           source.begin() + static_cast<long>(j))) {
                for (std::size_t t = i; t < i + n; ++t) mask[t] = true;
                break;
            }
        }
    }
    return mask;
}

inline std::string random_words(std::mt19937_64& rng, std::size_t count, std::size_t vocab, const std::string& prefix = "w") {
    std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i) out += (rng() % 7 == 0) ? ", " : " ";
        out += prefix + std::to_string(pick(rng));
    }
    return out;
}

} // namespace oracle
