#pragma once

#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "esap/text.hpp"

namespace esap {

using TokenSeq = std::vector<std::string>;

namespace detail {

inline std::string ngram_key(const TokenSeq& seq, std::size_t at, std::size_t n) {
    std::string key;
    for (std::size_t i = 0; i < n; ++i) {
        key += seq[at + i];
        key.push_back('\x1f');
    }
    return key;
}

inline std::unordered_set<std::string> ngram_set(const std::vector<TokenSeq>& sources, std::size_t n) {
    std::unordered_set<std::string> grams;
    for (const auto& s : sources) {
        for (std::size_t i = 0; i + n <= s.size(); ++i) grams.insert(ngram_key(s, i, n));
    }
    return grams;
}

} // namespace detail

/// Marks each token of `target` that lies inside an n-gram occurring verbatim
/// in any of `sources`. N-grams never span two sources. Callers choose n.
inline std::vector<bool> shared_ngram_mask(const TokenSeq& target, const std::vector<TokenSeq>& sources,
                                           std::size_t n) {
    std::vector<bool> mask(target.size(), false);
    if (n == 0 || target.size() < n) return mask;
    const auto grams = detail::ngram_set(sources, n);
    for (std::size_t i = 0; i + n <= target.size(); ++i) {
        if (grams.count(detail::ngram_key(target, i, n))) {
            std::fill(mask.begin() + static_cast<std::ptrdiff_t>(i), mask.begin() + static_cast<std::ptrdiff_t>(i + n), true);
        }
    }
    return mask;
}

/// Answer-token support against context: n shrinks to the answer length for
/// answers shorter than n.
inline std::vector<bool> supported_mask(const TokenSeq& answer, const std::vector<TokenSeq>& contexts, std::size_t n = 3) {
    if (answer.empty()) return {};
    return shared_ngram_mask(answer, contexts, std::min(n, answer.size()));
}

inline std::vector<bool> supported_mask(const TokenSeq& answer, const TokenSeq& context, std::size_t n = 3) {
    return supported_mask(answer, std::vector<TokenSeq>{context}, n);
}

inline double fraction_true(const std::vector<bool>& mask) {
    if (mask.empty()) return 0.0;
    return static_cast<double>(std::count(mask.begin(), mask.end(), true)) / static_cast<double>(mask.size());
}

/// Fraction of answer tokens supported by the contexts (0 for an empty answer).
inline double supported_fraction(std::string_view answer, const std::vector<std::string>& contexts, std::size_t n = 3) {
    std::vector<TokenSeq> ctx;
    for (const auto& c : contexts) ctx.push_back(token_texts(c));
    return fraction_true(supported_mask(token_texts(answer), ctx, n));
}

} // namespace esap
