// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "lkv/numerics.hpp"

namespace lkv {

/// Coordinate of a cell in the original vision grid.
struct Cell {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    bool operator==(const Cell&) const = default;
    auto operator<=>(const Cell&) const = default;
};

/// Vision tokens with their 2-D spatial layout and merge provenance.
///
/// `height`/`width` are the ORIGINAL grid dimensions; they stay fixed across
/// compression stages. Each token carries the coordinate of its representative
/// cell (the B-node cell after a merge), used to bucket survivors into window
/// bands at later stages. `provenance[i]` is the sorted set of original cell
/// ids token i represents.
struct TokenGrid {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    Matrix embeddings;  // one row per current token
    std::vector<Cell> coords;
    std::vector<std::vector<std::uint32_t>> provenance;

    std::size_t token_count() const { return embeddings.rows; }
    std::size_t dim() const { return embeddings.cols; }

    /// Full grid: token i at cell (i / width, i % width), provenance {i}.
    static TokenGrid full(std::uint32_t h, std::uint32_t w, Matrix emb) {
        if (emb.rows != static_cast<std::size_t>(h) * w) {
            throw std::invalid_argument("TokenGrid: embedding rows != h*w");
        }
        TokenGrid g;
        g.height = h;
        g.width = w;
        g.embeddings = std::move(emb);
        g.coords.reserve(g.embeddings.rows);
        g.provenance.reserve(g.embeddings.rows);
        for (std::uint32_t i = 0; i < h * w; ++i) {
            g.coords.push_back({i / w, i % w});
            g.provenance.push_back({i});
        }
        return g;
    }
};

/// One spatial window: a (row-band, col-band) index and the current-sequence
/// token indices it holds, in row-major scan order.
struct Window {
    std::uint32_t band_row = 0;
    std::uint32_t band_col = 0;
    std::vector<std::size_t> token_indices;
};

/// Balanced contiguous split of an axis of length `len` into `w` segments:
/// the first (len mod w) segments get ceil(len/w) cells. Returns segment
/// start offsets plus a final sentinel equal to len.
inline std::vector<std::uint32_t> balanced_segments(std::uint32_t len, std::uint32_t w) {
    std::vector<std::uint32_t> bounds(w + 1, 0);
    const std::uint32_t base = len / w;
    const std::uint32_t extra = len % w;
    for (std::uint32_t i = 0; i < w; ++i) {
        bounds[i + 1] = bounds[i] + base + (i < extra ? 1u : 0u);
    }
    return bounds;
}

/// Partition current tokens into w x w windows by their retained cell
/// coordinates. Windows with no surviving tokens are dropped.
inline std::vector<Window> partition_windows(const TokenGrid& grid, std::uint32_t w) {
    if (w < 1 || w > std::min(grid.height, grid.width)) {
        throw std::invalid_argument("partition_windows: w out of range");
    }
    const auto row_bounds = balanced_segments(grid.height, w);
    const auto col_bounds = balanced_segments(grid.width, w);

    auto band_of = [](const std::vector<std::uint32_t>& bounds, std::uint32_t x) {
        auto it = std::upper_bound(bounds.begin(), bounds.end(), x);
        return static_cast<std::uint32_t>(std::distance(bounds.begin(), it) - 1);
    };

    std::vector<Window> windows(static_cast<std::size_t>(w) * w);
    for (std::uint32_t r = 0; r < w; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            windows[r * w + c].band_row = r;
            windows[r * w + c].band_col = c;
        }
    }
    for (std::size_t i = 0; i < grid.token_count(); ++i) {
        const Cell cell = grid.coords[i];
        const std::uint32_t br = band_of(row_bounds, cell.row);
        const std::uint32_t bc = band_of(col_bounds, cell.col);
        windows[br * w + bc].token_indices.push_back(i);
    }
    // Sequence order is ascending row-major representative-cell order, so
    // indices within each window are already in scan order.
    std::erase_if(windows, [](const Window& win) { return win.token_indices.empty(); });
    return windows;
}

/// One surviving token handed back from a window after merging.
struct Survivor {
    std::size_t global_index = 0;  // index in the pre-stage token sequence
    std::vector<float> embedding;
    Cell coord;
    std::vector<std::uint32_t> provenance;
};

/// Concatenate per-window survivors in ascending original-index order into a
/// new TokenGrid. Provenance sets travel with their tokens.
inline TokenGrid reassemble(const TokenGrid& grid, std::vector<Survivor> survivors) {
    std::sort(survivors.begin(), survivors.end(),
              [](const Survivor& a, const Survivor& b) { return a.global_index < b.global_index; });
    for (std::size_t i = 1; i < survivors.size(); ++i) {
        if (survivors[i].global_index == survivors[i - 1].global_index) {
            throw std::logic_error("reassemble: duplicate global token index");
        }
    }
    if (survivors.empty()) {
        throw std::logic_error("reassemble: no surviving tokens");
    }

    TokenGrid out;
    out.height = grid.height;
    out.width = grid.width;
    const std::size_t dim = grid.dim();
    Matrix emb(survivors.size(), dim);
    out.coords.reserve(survivors.size());
    out.provenance.reserve(survivors.size());
    for (std::size_t i = 0; i < survivors.size(); ++i) {
        auto& s = survivors[i];
        if (s.embedding.size() != dim) {
            throw std::invalid_argument("reassemble: embedding dim mismatch");
        }
        std::copy(s.embedding.begin(), s.embedding.end(), emb.row(i).begin());
        out.coords.push_back(s.coord);
        out.provenance.push_back(std::move(s.provenance));
    }
    out.embeddings = std::move(emb);
    return out;
}

}  // namespace lkv
