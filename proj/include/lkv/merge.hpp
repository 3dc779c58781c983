// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lkv/grid.hpp"
#include "lkv/guidance.hpp"
#include "lkv/matching.hpp"
#include "lkv/numerics.hpp"

namespace lkv {

/// Output of apply_merge for one window: surviving rows in kept_order, with
/// updated provenance.
struct WindowMergeResult {
    Matrix embeddings;                                       // one row per survivor
    std::vector<std::vector<std::uint32_t>> provenance;      // per survivor
    std::vector<std::size_t> kept_local;                     // window-local survivor indices
};

/// Guidance-weighted message passing: each edge target absorbs its sources,
///   x_b <- (xi_b * x_b + sum_a xi_a * x_a) / (xi_b + sum_a xi_a),
/// removed sources are deleted, untouched tokens pass through unchanged.
inline WindowMergeResult apply_merge(const Matrix& window_emb, const MergePlan& plan,
                                     const std::vector<float>& xi,
                                     const std::vector<std::vector<std::uint32_t>>& provenance) {
    const std::size_t n = window_emb.rows;
    if (xi.size() != n) {
        throw std::invalid_argument("apply_merge: guidance length mismatch");
    }
    if (provenance.size() != n) {
        throw std::invalid_argument("apply_merge: provenance length mismatch");
    }
    for (float w : xi) {
        if (!(w > 0.0f)) throw std::domain_error("apply_merge: nonpositive guidance weight");
    }

    // Accumulate weighted sums per target.
    std::vector<std::vector<std::size_t>> incoming(n);
    for (const auto& [src, dst] : plan.edges) {
        if (src >= n || dst >= n) throw std::invalid_argument("apply_merge: edge index out of range");
        incoming[dst].push_back(src);
    }

    const std::size_t dim = window_emb.cols;
    WindowMergeResult out;
    out.kept_local = plan.kept_order;
    out.embeddings = Matrix(plan.kept_order.size(), dim);
    out.provenance.reserve(plan.kept_order.size());

    for (std::size_t k = 0; k < plan.kept_order.size(); ++k) {
        const std::size_t idx = plan.kept_order[k];
        auto dst_row = out.embeddings.row(k);
        auto src_row = window_emb.row(idx);
        auto prov = provenance[idx];
        if (incoming[idx].empty()) {
            std::copy(src_row.begin(), src_row.end(), dst_row.begin());
        } else {
            double denom = xi[idx];
            std::vector<double> acc(dim);
            for (std::size_t d = 0; d < dim; ++d) acc[d] = static_cast<double>(xi[idx]) * src_row[d];
            for (std::size_t src : incoming[idx]) {
                denom += xi[src];
                auto row = window_emb.row(src);
                for (std::size_t d = 0; d < dim; ++d) acc[d] += static_cast<double>(xi[src]) * row[d];
                prov.insert(prov.end(), provenance[src].begin(), provenance[src].end());
            }
            denom = std::max(denom, 1e-12);
            for (std::size_t d = 0; d < dim; ++d) {
                dst_row[d] = static_cast<float>(acc[d] / denom);
            }
            std::sort(prov.begin(), prov.end());
        }
        out.provenance.push_back(std::move(prov));
    }
    return out;
}

}  // namespace lkv
