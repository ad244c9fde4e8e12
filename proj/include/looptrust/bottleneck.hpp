#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "looptrust/persistence.hpp"

namespace looptrust {

namespace detail {

inline double linf(const DiagramPoint& a, const DiagramPoint& b) {
    return std::max(std::abs(a.death - b.death), std::abs(a.birth - b.birth));
}

/// L-infinity distance from a point to its projection on the diagonal.
inline double diagonal_distance(const DiagramPoint& p) { return std::abs(p.birth - p.death) / 2.0; }

/// Hopcroft-Karp maximum matching on a bipartite graph given as left-side adjacency lists.
class HopcroftKarp {
public:
    HopcroftKarp(std::size_t n_left, std::size_t n_right, const std::vector<std::vector<std::uint32_t>>& adj)
        : adj_(adj), match_l_(n_left, kNone), match_r_(n_right, kNone), dist_(n_left) {}

    std::size_t run() {
        std::size_t matched = 0;
        while (bfs()) {
            for (std::uint32_t u = 0; u < match_l_.size(); ++u)
                if (match_l_[u] == kNone && dfs(u)) ++matched;
        }
        return matched;
    }

private:
    static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    static constexpr std::uint32_t kInf = std::numeric_limits<std::uint32_t>::max();

    bool bfs() {
        std::queue<std::uint32_t> q;
        bool found = false;
        for (std::uint32_t u = 0; u < match_l_.size(); ++u) {
            if (match_l_[u] == kNone) {
                dist_[u] = 0;
                q.push(u);
            } else {
                dist_[u] = kInf;
            }
        }
        while (!q.empty()) {
            const std::uint32_t u = q.front();
            q.pop();
            for (std::uint32_t v : adj_[u]) {
                const std::uint32_t w = match_r_[v];
                if (w == kNone) {
                    found = true;
                } else if (dist_[w] == kInf) {
                    dist_[w] = dist_[u] + 1;
                    q.push(w);
                }
            }
        }
        return found;
    }

    bool dfs(std::uint32_t u) {
        for (std::uint32_t v : adj_[u]) {
            const std::uint32_t w = match_r_[v];
            if (w == kNone || (dist_[w] == dist_[u] + 1 && dfs(w))) {
                match_l_[u] = v;
                match_r_[v] = u;
                return true;
            }
        }
        dist_[u] = kInf;
        return false;
    }

    const std::vector<std::vector<std::uint32_t>>& adj_;
    std::vector<std::uint32_t> match_l_, match_r_, dist_;
};

/// Whether a diagonal-augmented perfect matching exists with every cost <= r.
/// Left side: a_0..a_{n-1}, then diagonal copies of b. Right side: b_0..b_{m-1}, then diagonal
/// copies of a. Each off-diagonal point may only use its own projection; two projections match at
/// cost 0.
inline bool perfect_matching_within(const std::vector<DiagramPoint>& a, const std::vector<DiagramPoint>& b,
                                    double r) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::uint32_t>> adj(n + m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j)
            if (linf(a[i], b[j]) <= r) adj[i].push_back(static_cast<std::uint32_t>(j));
        if (diagonal_distance(a[i]) <= r) adj[i].push_back(static_cast<std::uint32_t>(m + i));
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (diagonal_distance(b[j]) <= r) adj[n + j].push_back(static_cast<std::uint32_t>(j));
        for (std::size_t i = 0; i < n; ++i) adj[n + j].push_back(static_cast<std::uint32_t>(m + i));
    }
    HopcroftKarp hk(n + m, m + n, adj);
    return hk.run() == n + m;
}

}  // namespace detail

/// Exact bottleneck distance between two finite point lists (diagonal-augmented).
///
/// The optimum is always one of the pairwise or point-to-diagonal costs, so the candidates are
/// sorted and binary-searched with a perfect-matching feasibility test.
inline double bottleneck_distance(const std::vector<DiagramPoint>& a, const std::vector<DiagramPoint>& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::vector<double> candidates{0.0};
    candidates.reserve(a.size() * b.size() + a.size() + b.size() + 1);
    for (const auto& p : a) candidates.push_back(detail::diagonal_distance(p));
    for (const auto& q : b) candidates.push_back(detail::diagonal_distance(q));
    for (const auto& p : a)
        for (const auto& q : b) candidates.push_back(detail::linf(p, q));
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    std::size_t lo = 0, hi = candidates.size() - 1;  // the largest candidate is always feasible
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (detail::perfect_matching_within(a, b, candidates[mid])) hi = mid;
        else lo = mid + 1;
    }
    return candidates[lo];
}

/// Bottleneck distance restricted to one homology dimension; essential points are excluded.
inline double bottleneck_distance(const PersistenceDiagram& a, const PersistenceDiagram& b, int dim) {
    return bottleneck_distance(a.of_dim(dim, false), b.of_dim(dim, false));
}

}  // namespace looptrust
