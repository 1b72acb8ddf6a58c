#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "esap/binio.hpp"
#include "esap/error.hpp"
#include "esap/lexical.hpp"
#include "esap/ports.hpp"

namespace esap {

struct AnnParams {
    std::size_t m = 16;                 ///< neighbor degree (2m on layer 0)
    std::size_t ef_construction = 200;
    std::size_t ef_search = 128;
    std::size_t exact_threshold = 10000; ///< exact search below this many vectors
    std::uint64_t seed = 42;            ///< level assignment
};

/// Inner product accumulated in double, component order fixed.
inline double dot(std::span<const float> a, std::span<const float> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

namespace detail {
inline bool better(const Scored& x, const Scored& y) {
    return x.score != y.score ? x.score > y.score : x.ordinal < y.ordinal;
}
} // namespace detail

/// Hierarchical navigable small-world graph over unit vectors (distance 1 - dot).
class HnswGraph {
public:
    HnswGraph() = default;

    HnswGraph(std::size_t dim, AnnParams p) : dim_(dim), params_(p) {
        ml_ = 1.0 / std::log(static_cast<double>(std::max<std::size_t>(p.m, 2)));
    }

    /// Inserts vectors 0..n-1 of `data` (row-major, `dim` floats each) in order.
    void build(std::span<const float> data) {
        const std::size_t n = data.size() / dim_;
        levels_.assign(n, 0);
        links_.assign(n, {});
        std::mt19937_64 rng(params_.seed);
        std::uniform_real_distribution<double> unif(std::nextafter(0.0, 1.0), 1.0);
        for (std::uint32_t i = 0; i < n; ++i) {
            const int level = static_cast<int>(std::floor(-std::log(unif(rng)) * ml_));
            insert(data, i, level);
        }
    }

    /// Top-k by similarity (ties: lower ordinal first).
    std::vector<Scored> search(std::span<const float> data, std::span<const float> q, std::size_t k) const {
        if (levels_.empty() || k == 0) return {};
        std::uint32_t ep = entry_;
        double ep_d = dist(data, q, ep);
        for (int lc = max_level_; lc > 0; --lc) greedy(data, q, ep, ep_d, lc);
        auto found = search_layer(data, q, {{ep_d, ep}}, std::max(params_.ef_search, k), 0);
        std::vector<Scored> out;
        out.reserve(found.size());
        for (auto [d, id] : found) out.push_back({id, dot(row(data, id), q)});
        std::sort(out.begin(), out.end(), detail::better);
        if (out.size() > k) out.resize(k);
        return out;
    }

    std::size_t size() const noexcept { return levels_.size(); }
    int max_level() const noexcept { return max_level_; }
    const std::vector<std::vector<std::uint32_t>>& links(std::uint32_t node) const { return links_.at(node); }

    void serialize(binio::Writer& w) const {
        w.put<std::uint64_t>(levels_.size());
        w.put<std::uint32_t>(entry_);
        w.put<std::int32_t>(max_level_);
        for (std::size_t i = 0; i < levels_.size(); ++i) {
            w.put<std::int32_t>(levels_[i]);
            for (const auto& l : links_[i]) w.put_vector(l);
        }
    }

    static HnswGraph deserialize(binio::Reader& r, std::size_t dim, AnnParams p) {
        HnswGraph g(dim, p);
        const auto n = r.get<std::uint64_t>();
        g.entry_ = r.get<std::uint32_t>();
        g.max_level_ = r.get<std::int32_t>();
        if (n > 0 && (g.entry_ >= n || g.max_level_ < 0 || g.max_level_ > 64)) {
            throw Error(Errc::CorruptIndex, "invalid graph header");
        }
        g.levels_.resize(n);
        g.links_.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            g.levels_[i] = r.get<std::int32_t>();
            if (g.levels_[i] < 0 || g.levels_[i] > g.max_level_) throw Error(Errc::CorruptIndex, "invalid node level");
            g.links_[i].resize(static_cast<std::size_t>(g.levels_[i]) + 1);
            for (auto& l : g.links_[i]) {
                l = r.get_vector<std::uint32_t>();
                for (auto id : l) {
                    if (id >= n) throw Error(Errc::CorruptIndex, "graph link out of range");
                }
            }
        }
        return g;
    }

private:
    using DistId = std::pair<double, std::uint32_t>;

    std::span<const float> row(std::span<const float> data, std::uint32_t i) const {
        return data.subspan(static_cast<std::size_t>(i) * dim_, dim_);
    }

    double dist(std::span<const float> data, std::span<const float> q, std::uint32_t i) const {
        return 1.0 - dot(row(data, i), q);
    }

    std::size_t max_links(int level) const { return level == 0 ? 2 * params_.m : params_.m; }

    void greedy(std::span<const float> data, std::span<const float> q, std::uint32_t& ep, double& ep_d, int lc) const {
        bool changed = true;
        while (changed) {
            changed = false;
            for (auto nb : links_[ep][static_cast<std::size_t>(lc)]) {
                const double d = dist(data, q, nb);
                if (d < ep_d || (d == ep_d && nb < ep)) {
                    ep = nb;
                    ep_d = d;
                    changed = true;
                }
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nearest, ascending distance.
    std::vector<DistId> search_layer(std::span<const float> data, std::span<const float> q,
                                     const std::vector<DistId>& entry, std::size_t ef, int lc) const {
        std::vector<char> visited(levels_.size(), 0);
        std::priority_queue<DistId, std::vector<DistId>, std::greater<>> candidates;
        std::priority_queue<DistId> best;
        for (const auto& e : entry) {
            visited[e.second] = 1;
            candidates.push(e);
            best.push(e);
        }
        while (best.size() > ef) best.pop();
        while (!candidates.empty()) {
            const auto [cd, c] = candidates.top();
            if (best.size() >= ef && cd > best.top().first) break;
            candidates.pop();
            for (auto nb : links_[c][static_cast<std::size_t>(lc)]) {
                if (visited[nb]) continue;
                visited[nb] = 1;
                const double d = dist(data, q, nb);
                if (best.size() < ef || d < best.top().first) {
                    candidates.push({d, nb});
                    best.push({d, nb});
                    if (best.size() > ef) best.pop();
                }
            }
        }
        std::vector<DistId> out;
        out.reserve(best.size());
        while (!best.empty()) {
            out.push_back(best.top());
            best.pop();
        }
        std::reverse(out.begin(), out.end());
        return out;
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept; pruned candidates back-fill to m.
    std::vector<std::uint32_t> select_neighbors(std::span<const float> data, std::vector<DistId> cands,
                                                std::size_t m) const {
        std::sort(cands.begin(), cands.end());
        std::vector<std::uint32_t> kept;
        std::vector<std::uint32_t> pruned;
        for (const auto& [d, id] : cands) {
            if (kept.size() >= m) break;
            bool ok = true;
            for (auto r : kept) {
                if (1.0 - dot(row(data, id), row(data, r)) < d) {
                    ok = false;
                    break;
                }
            }
            (ok ? kept : pruned).push_back(id);
        }
        for (std::size_t i = 0; i < pruned.size() && kept.size() < m; ++i) kept.push_back(pruned[i]);
        return kept;
    }

    void insert(std::span<const float> data, std::uint32_t id, int level) {
        levels_[id] = level;
        links_[id].assign(static_cast<std::size_t>(level) + 1, {});
        if (id == 0) {
            entry_ = 0;
            max_level_ = level;
            return;
        }
        const auto q = row(data, id);
        std::uint32_t ep = entry_;
        double ep_d = dist(data, q, ep);
        for (int lc = max_level_; lc > level; --lc) greedy(data, q, ep, ep_d, lc);
        std::vector<DistId> eps{{ep_d, ep}};
        for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
            auto found = search_layer(data, q, eps, params_.ef_construction, lc);
            auto chosen = select_neighbors(data, found, params_.m);
            links_[id][static_cast<std::size_t>(lc)] = chosen;
            for (auto nb : chosen) {
                auto& nl = links_[nb][static_cast<std::size_t>(lc)];
                nl.push_back(id);
                if (nl.size() > max_links(lc)) {
                    std::vector<DistId> c;
                    c.reserve(nl.size());
                    const auto base = row(data, nb);
                    for (auto x : nl) c.push_back({1.0 - dot(row(data, x), base), x});
                    nl = select_neighbors(data, std::move(c), max_links(lc));
                }
            }
            eps = std::move(found);
        }
        if (level > max_level_) {
            max_level_ = level;
            entry_ = id;
        }
    }

    std::size_t dim_ = 0;
    AnnParams params_;
    double ml_ = 0.0;
    std::vector<int> levels_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;
    std::uint32_t entry_ = 0;
    int max_level_ = 0;
};

/// Dense vectors with exact search for small collections and an HNSW graph otherwise.
class DenseIndex {
public:
    DenseIndex() = default;

    static DenseIndex build(std::size_t dim, std::vector<float> flat, AnnParams params = {}) {
        if (dim == 0 || flat.size() % dim != 0) throw Error(Errc::DimensionMismatch, "vector data not a multiple of dim");
        DenseIndex idx;
        idx.dim_ = dim;
        idx.params_ = params;
        idx.data_ = std::move(flat);
        const std::size_t n = idx.data_.size() / dim;
        idx.exact_ = n < params.exact_threshold;
        if (!idx.exact_) {
            idx.graph_ = HnswGraph(dim, params);
            idx.graph_.build(idx.data_);
        }
        return idx;
    }

    static DenseIndex build(const std::vector<Vector>& vectors, std::size_t dim, AnnParams params = {}) {
        std::vector<float> flat;
        flat.reserve(vectors.size() * dim);
        for (const auto& v : vectors) {
            if (v.size() != dim) {
                throw Error(Errc::DimensionMismatch,
                            "vector of dimension " + std::to_string(v.size()) + ", expected " + std::to_string(dim));
            }
            flat.insert(flat.end(), v.begin(), v.end());
        }
        return build(dim, std::move(flat), params);
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return dim_ ? data_.size() / dim_ : 0; }
    bool exact() const noexcept { return exact_; }
    const AnnParams& params() const noexcept { return params_; }
    const HnswGraph& graph() const noexcept { return graph_; }

    std::span<const float> vector(std::uint32_t ordinal) const {
        return std::span<const float>(data_).subspan(static_cast<std::size_t>(ordinal) * dim_, dim_);
    }

    double similarity(std::span<const float> q, std::uint32_t ordinal) const { return dot(vector(ordinal), q); }

    /// Top-k by cosine similarity (vectors are unit norm, so the inner product).
    std::vector<Scored> search(std::span<const float> q, std::size_t k) const {
        if (q.size() != dim_) {
            throw Error(Errc::DimensionMismatch,
                        "query dimension " + std::to_string(q.size()) + ", index dimension " + std::to_string(dim_));
        }
        if (!exact_) return graph_.search(data_, q, k);
        return exhaustive(q, k);
    }

    std::vector<Scored> exhaustive(std::span<const float> q, std::size_t k) const {
        std::vector<Scored> all;
        const std::size_t n = size();
        all.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) all.push_back({i, dot(vector(i), q)});
        k = std::min(k, all.size());
        std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), detail::better);
        all.resize(k);
        return all;
    }

    void serialize(binio::Writer& w) const {
        w.put<std::uint64_t>(dim_);
        w.put<std::uint8_t>(exact_ ? 1 : 0);
        w.put<std::uint64_t>(params_.m);
        w.put<std::uint64_t>(params_.ef_construction);
        w.put<std::uint64_t>(params_.ef_search);
        w.put<std::uint64_t>(params_.exact_threshold);
        w.put<std::uint64_t>(params_.seed);
        w.put_vector(data_);
        if (!exact_) graph_.serialize(w);
    }

    static DenseIndex deserialize(binio::Reader& r) {
        DenseIndex idx;
        idx.dim_ = r.get<std::uint64_t>();
        idx.exact_ = r.get<std::uint8_t>() != 0;
        idx.params_.m = r.get<std::uint64_t>();
        idx.params_.ef_construction = r.get<std::uint64_t>();
        idx.params_.ef_search = r.get<std::uint64_t>();
        idx.params_.exact_threshold = r.get<std::uint64_t>();
        idx.params_.seed = r.get<std::uint64_t>();
        idx.data_ = r.get_vector<float>();
        if (idx.dim_ == 0 || idx.data_.size() % idx.dim_ != 0) throw Error(Errc::CorruptIndex, "vector block size");
        if (!idx.exact_) {
            idx.graph_ = HnswGraph::deserialize(r, idx.dim_, idx.params_);
            if (idx.graph_.size() != idx.size()) throw Error(Errc::CorruptIndex, "graph size mismatch");
        }
        return idx;
    }

private:
    std::size_t dim_ = 0;
    bool exact_ = true;
    AnnParams params_;
    std::vector<float> data_;
    HnswGraph graph_;
};

} // namespace esap
