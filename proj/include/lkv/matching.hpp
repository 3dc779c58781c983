// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "lkv/numerics.hpp"

namespace lkv {

enum class FdMetric {
    CosineDivergence,  // 1 - <x,y> / max(||x|| ||y||, 1e-12)
    Euclidean,
    L2Squared,
};

/// Feature divergence between two embeddings.
inline float feature_divergence(std::span<const float> x, std::span<const float> y,
                                FdMetric metric) {
    if (x.size() != y.size()) {
        throw std::invalid_argument("feature_divergence: dimension mismatch");
    }
    switch (metric) {
        case FdMetric::CosineDivergence: {
            double dot = 0.0, nx = 0.0, ny = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                dot += static_cast<double>(x[i]) * y[i];
                nx += static_cast<double>(x[i]) * x[i];
                ny += static_cast<double>(y[i]) * y[i];
            }
            const double denom = std::max(std::sqrt(nx) * std::sqrt(ny), 1e-12);
            return static_cast<float>(1.0 - dot / denom);
        }
        case FdMetric::Euclidean:
        case FdMetric::L2Squared: {
            double acc = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = static_cast<double>(x[i]) - y[i];
                acc += d * d;
            }
            return static_cast<float>(metric == FdMetric::Euclidean ? std::sqrt(acc) : acc);
        }
    }
    throw std::logic_error("feature_divergence: unknown metric");
}

/// Merge plan for one window. All indices are window-local positions (0-based,
/// in window scan order).
struct MergePlan {
    std::vector<std::size_t> a_indices;
    std::vector<std::size_t> b_indices;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (source, target)
    std::vector<std::size_t> removed;                        // sources of edges
    std::vector<std::size_t> kept_order;                     // survivors, ascending
    std::vector<float> edge_fd;                              // FD per selected edge
};

/// Alternating odd/even split: 1-based odd positions go to A, even to B.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> alternating_split(
    std::size_t window_size) {
    if (window_size == 0) {
        throw std::invalid_argument("alternating_split: empty window");
    }
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < window_size; ++i) {
        (i % 2 == 0 ? a : b).push_back(i);
    }
    return {std::move(a), std::move(b)};
}

namespace detail {

inline void finish_plan(MergePlan& plan, std::size_t window_size) {
    std::vector<bool> gone(window_size, false);
    for (std::size_t idx : plan.removed) gone[idx] = true;
    for (std::size_t i = 0; i < window_size; ++i) {
        if (!gone[i]) plan.kept_order.push_back(i);
    }
}

}  // namespace detail

/// Bipartite plan: each A node proposes its lowest-FD B partner (ties to the
/// lowest B index); the r lowest-FD proposals win (ties to the lowest A
/// index). Several A nodes may share one B target.
inline MergePlan build_plan_bipartite(const Matrix& window_emb,
                                      std::vector<std::size_t> a_indices,
                                      std::vector<std::size_t> b_indices, FdMetric metric,
                                      std::size_t r) {
    if (r > a_indices.size()) {
        throw std::invalid_argument("build_plan_bipartite: r exceeds |A|");
    }
    if (r > 0 && b_indices.empty()) {
        throw std::invalid_argument("build_plan_bipartite: r > 0 with empty B");
    }
    MergePlan plan;
    plan.a_indices = std::move(a_indices);
    plan.b_indices = std::move(b_indices);

    struct Candidate {
        float fd;
        std::size_t a, b;
    };
    std::vector<Candidate> candidates;
    if (r > 0) {
        candidates.reserve(plan.a_indices.size());
        for (std::size_t a : plan.a_indices) {
            std::size_t best_b = plan.b_indices.front();
            float best_fd = feature_divergence(window_emb.row(a), window_emb.row(best_b), metric);
            for (std::size_t k = 1; k < plan.b_indices.size(); ++k) {
                const std::size_t b = plan.b_indices[k];
                const float fd = feature_divergence(window_emb.row(a), window_emb.row(b), metric);
                if (fd < best_fd || (fd == best_fd && b < best_b)) {
                    best_fd = fd;
                    best_b = b;
                }
            }
            candidates.push_back({best_fd, a, best_b});
        }
        std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
            return x.fd != y.fd ? x.fd < y.fd : x.a < y.a;
        });
        for (std::size_t i = 0; i < r; ++i) {
            plan.edges.emplace_back(candidates[i].a, candidates[i].b);
            plan.removed.push_back(candidates[i].a);
            plan.edge_fd.push_back(candidates[i].fd);
        }
    }
    detail::finish_plan(plan, window_emb.rows);
    return plan;
}

/// Full-pairwise ablation: greedy matching over all pairs in ascending FD
/// order (ties by lexicographic pair index); each selected pair merges the
/// earlier-index token into the later-index one.
inline MergePlan build_plan_pairwise(const Matrix& window_emb, FdMetric metric, std::size_t r) {
    const std::size_t n = window_emb.rows;
    if (r > n / 2) {
        throw std::invalid_argument("build_plan_pairwise: r exceeds floor(v/2)");
    }
    MergePlan plan;
    struct Candidate {
        float fd;
        std::size_t i, j;
    };
    std::vector<Candidate> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            pairs.push_back({feature_divergence(window_emb.row(i), window_emb.row(j), metric), i, j});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Candidate& x, const Candidate& y) {
        if (x.fd != y.fd) return x.fd < y.fd;
        if (x.i != y.i) return x.i < y.i;
        return x.j < y.j;
    });
    std::vector<bool> used(n, false);
    for (const auto& p : pairs) {
        if (plan.edges.size() == r) break;
        if (used[p.i] || used[p.j]) continue;
        used[p.i] = used[p.j] = true;
        plan.edges.emplace_back(p.i, p.j);
        plan.removed.push_back(p.i);
        plan.edge_fd.push_back(p.fd);
        plan.a_indices.push_back(p.i);
        plan.b_indices.push_back(p.j);
    }
    detail::finish_plan(plan, n);
    return plan;
}

enum class MatchingMode { Bipartite, Pairwise };

/// Number of FD evaluations for a window of v tokens.
inline std::uint64_t comparison_count(std::uint64_t v, MatchingMode mode) {
    if (v < 2) return 0;
    if (mode == MatchingMode::Pairwise) return v * (v - 1) / 2;
    return ((v + 1) / 2) * (v / 2);
}

}  // namespace lkv
