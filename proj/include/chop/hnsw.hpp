#pragma once

// Hierarchical Navigable Small World graph over unit-norm vectors.
// Distance is 1 - dot(a, b). The graph stores ids only; vectors are fetched
// through a caller-supplied accessor so the store keeps a single copy.

#include <chop/embedding.hpp>
#include <chop/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace chop {

struct HnswParams {
    std::size_t m = 16;               ///< links per node on upper layers; layer 0 allows 2m
    std::size_t ef_construction = 200;
    std::size_t ef_search = 64;
    std::uint64_t seed = 42;

    friend bool operator==(const HnswParams&, const HnswParams&) = default;
};

class HnswIndex {
public:
    using Id = std::uint32_t;
    using VectorAt = std::function<std::span<const double>(Id)>;
    /// (distance, id), ascending distance.
    using Candidates = std::vector<std::pair<double, Id>>;

    explicit HnswIndex(HnswParams params = {})
        : params_(params), rng_(params.seed), level_mult_(1.0 / std::log(static_cast<double>(std::max<std::size_t>(params.m, 2)))) {
        if (params_.m < 2)
            throw UsageError("hnsw: m must be at least 2");
        if (params_.ef_construction < 1 || params_.ef_search < 1)
            throw UsageError("hnsw: ef parameters must be positive");
    }

    const HnswParams& params() const noexcept { return params_; }
    std::size_t size() const noexcept { return links_.size(); }
    bool empty() const noexcept { return links_.empty(); }
    int max_level() const noexcept { return max_level_; }
    Id entry_point() const noexcept { return entry_; }

    /// Ids must be inserted densely: 0, 1, 2, ...
    void insert(Id id, const VectorAt& at) {
        if (id != links_.size())
            throw UsageError("hnsw: ids must be inserted in order");
        int level = random_level();
        links_.emplace_back(static_cast<std::size_t>(level) + 1);

        if (id == 0) {
            entry_ = 0;
            max_level_ = level;
            return;
        }

        auto q = at(id);
        Id cur = entry_;
        double cur_dist = distance(q, at(cur));
        for (int lc = max_level_; lc > level; --lc)
            greedy_descend(q, cur, cur_dist, lc, at);

        for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
            auto found = search_layer(q, {{cur_dist, cur}}, params_.ef_construction, lc, at);
            auto chosen = select_neighbors(found, max_links(lc), at);
            links_[id][lc].clear();
            for (auto& [d, n] : chosen)
                links_[id][lc].push_back(n);
            for (auto& [d, n] : chosen)
                link_back(n, id, lc, at);
            cur_dist = found.front().first;
            cur = found.front().second;
        }
        if (level > max_level_) {
            max_level_ = level;
            entry_ = id;
        }
    }

    /// Approximate k nearest ids to `q` (unit norm), ascending distance.
    Candidates search(std::span<const double> q, std::size_t k, std::size_t ef, const VectorAt& at) const {
        if (links_.empty() || k == 0)
            return {};
        Id cur = entry_;
        double cur_dist = distance(q, at(cur));
        for (int lc = max_level_; lc > 0; --lc)
            greedy_descend(q, cur, cur_dist, lc, at);
        auto found = search_layer(q, {{cur_dist, cur}}, std::max(ef, k), 0, at);
        if (found.size() > k)
            found.resize(k);
        return found;
    }

    // -- serialization access ------------------------------------------------
    const std::vector<std::vector<std::vector<Id>>>& links() const noexcept { return links_; }

    static HnswIndex restore(HnswParams params, Id entry, int max_level, std::vector<std::vector<std::vector<Id>>> links) {
        HnswIndex h(params);
        h.entry_ = entry;
        h.max_level_ = max_level;
        h.links_ = std::move(links);
        // advance the level generator as if the nodes had been inserted
        for (std::size_t i = 0; i < h.links_.size(); ++i)
            h.random_level();
        return h;
    }

private:
    static double distance(std::span<const double> a, std::span<const double> b) noexcept { return 1.0 - dot(a, b); }

    std::size_t max_links(int level) const noexcept { return level == 0 ? 2 * params_.m : params_.m; }

    int random_level() {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(rng_);
        if (r <= 0.0)
            r = 1e-12;
        return static_cast<int>(std::floor(-std::log(r) * level_mult_));
    }

    void greedy_descend(std::span<const double> q, Id& cur, double& cur_dist, int level, const VectorAt& at) const {
        bool moved = true;
        while (moved) {
            moved = false;
            for (Id n : links_[cur][level]) {
                double d = distance(q, at(n));
                if (d < cur_dist || (d == cur_dist && n < cur)) {
                    cur_dist = d;
                    cur = n;
                    moved = true;
                }
            }
        }
    }

    Candidates search_layer(std::span<const double> q, Candidates entries, std::size_t ef, int level,
                            const VectorAt& at) const {
        std::vector<std::uint8_t> visited(links_.size(), 0);
        std::priority_queue<std::pair<double, Id>, std::vector<std::pair<double, Id>>, std::greater<>> frontier;
        std::priority_queue<std::pair<double, Id>> best; // max-heap: worst on top
        for (auto& e : entries) {
            visited[e.second] = 1;
            frontier.push(e);
            best.push(e);
        }
        while (!frontier.empty()) {
            auto [d, c] = frontier.top();
            if (d > best.top().first && best.size() >= ef)
                break;
            frontier.pop();
            for (Id n : links_[c][level]) {
                if (visited[n])
                    continue;
                visited[n] = 1;
                double dn = distance(q, at(n));
                if (best.size() < ef || dn < best.top().first) {
                    frontier.push({dn, n});
                    best.push({dn, n});
                    if (best.size() > ef)
                        best.pop();
                }
            }
        }
        Candidates out(best.size());
        for (auto i = out.size(); i-- > 0; best.pop())
            out[i] = best.top();
        return out;
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbor already kept; top up with pruned ones.
    Candidates select_neighbors(const Candidates& sorted, std::size_t limit, const VectorAt& at) const {
        Candidates kept, pruned;
        for (const auto& c : sorted) {
            if (kept.size() >= limit)
                break;
            bool good = true;
            auto vc = at(c.second);
            for (const auto& k : kept) {
                if (distance(vc, at(k.second)) < c.first) {
                    good = false;
                    break;
                }
            }
            (good ? kept : pruned).push_back(c);
        }
        for (std::size_t i = 0; kept.size() < limit && i < pruned.size(); ++i)
            kept.push_back(pruned[i]);
        return kept;
    }

    void link_back(Id node, Id added, int level, const VectorAt& at) {
        auto& adj = links_[node][level];
        adj.push_back(added);
        auto limit = max_links(level);
        if (adj.size() <= limit)
            return;
        auto base = at(node);
        Candidates cand;
        cand.reserve(adj.size());
        for (Id n : adj)
            cand.push_back({distance(base, at(n)), n});
        std::sort(cand.begin(), cand.end());
        auto chosen = select_neighbors(cand, limit, at);
        adj.clear();
        for (auto& [d, n] : chosen)
            adj.push_back(n);
    }

    HnswParams params_;
    std::mt19937_64 rng_;
    double level_mult_;
    std::vector<std::vector<std::vector<Id>>> links_; // [node][level] -> neighbors
    Id entry_ = 0;
    int max_level_ = 0;
};

} // namespace chop
