// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lkv/pipeline.hpp"

namespace lkv {

/// Transformer shape for cost estimates.
struct ModelShape {
    std::size_t layers = 8;
    std::size_t dim = 64;
    std::size_t ff_dim = 256;
    std::size_t heads = 4;
    std::size_t kv_dtype_bytes = 2;
    std::size_t prompt_len = 16;
    std::size_t vision_tokens = 256;

    void validate() const {
        if (layers < 1 || dim < 1 || ff_dim < 1 || heads < 1 || kv_dtype_bytes < 1) {
            throw std::invalid_argument("ModelShape: dimensions must be positive");
        }
    }
};

struct CostReport {
    std::vector<std::size_t> per_layer_vision_tokens;
    double token_layers = 0.0;              // sum of per-layer counts
    double closed_form_token_layers = 0.0;  // analytic value
    double retention_ratio = 0.0;           // closed_form / (v * L)
    double flops_estimate = 0.0;
    double kv_bytes_estimate = 0.0;
    std::uint64_t comparison_ops = 0;
};

/// Closed-form total vision token-layers under a schedule:
///   v * ( lambda_1
///       + sum_{i=2..s} (lambda_i - lambda_{i-1}) * prod_{j<i} (1 - rho_j)
///       + (L - lambda_s) * prod_{j<=s} (1 - rho_j) ).
/// An empty schedule gives v * L.
inline double token_layers_closed_form(double v, std::size_t num_layers,
                                       const std::vector<std::size_t>& lambdas,
                                       const std::vector<double>& ratios) {
    if (lambdas.size() != ratios.size()) {
        throw std::invalid_argument("token_layers_closed_form: list length mismatch");
    }
    if (lambdas.empty()) return v * static_cast<double>(num_layers);
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (lambdas[i] < 1 || lambdas[i] >= num_layers ||
            (i > 0 && lambdas[i] <= lambdas[i - 1])) {
            throw std::invalid_argument("token_layers_closed_form: invalid lambda sequence");
        }
    }
    double factor = static_cast<double>(lambdas.front());
    double keep = 1.0;
    for (std::size_t i = 1; i < lambdas.size(); ++i) {
        keep *= 1.0 - ratios[i - 1];
        factor += static_cast<double>(lambdas[i] - lambdas[i - 1]) * keep;
    }
    keep *= 1.0 - ratios.back();
    factor += static_cast<double>(num_layers - lambdas.back()) * keep;
    return v * factor;
}

/// Exact-arithmetic token count surviving all steps: v * prod (1 - rho_i).
inline double tokens_remaining(double v, const std::vector<double>& ratios) {
    double keep = 1.0;
    for (double rho : ratios) {
        if (!(rho > 0.0 && rho <= 0.5)) {
            throw std::invalid_argument("tokens_remaining: rho out of (0, 0.5]");
        }
        keep *= 1.0 - rho;
    }
    return v * keep;
}

/// Per-layer counts implied by the closed form (exact rational counts, no
/// per-window flooring). Counts are tokens entering each layer, 1-based.
inline std::vector<double> per_layer_counts_closed_form(double v, std::size_t num_layers,
                                                        const std::vector<std::size_t>& lambdas,
                                                        const std::vector<double>& ratios) {
    std::vector<double> counts(num_layers, v);
    double cur = v;
    std::size_t stage = 0;
    for (std::size_t layer = 1; layer <= num_layers; ++layer) {
        counts[layer - 1] = cur;
        if (stage < lambdas.size() && lambdas[stage] == layer) {
            cur *= 1.0 - ratios[stage];
            ++stage;
        }
    }
    return counts;
}

/// Dense-transformer FLOPs estimate over the prefill. Per layer with
/// t = vision + prompt tokens: t*8d^2 (QKVO) + 4*t^2*d (attention) +
/// t*4*d*d_ff (MLP). An estimate, not a measured meter.
inline double estimate_flops(const std::vector<double>& per_layer_vision_counts,
                             const ModelShape& shape, std::size_t prompt_len) {
    shape.validate();
    if (per_layer_vision_counts.size() != shape.layers) {
        throw std::invalid_argument("estimate_flops: counts length must equal layer count");
    }
    const double d = static_cast<double>(shape.dim);
    const double dff = static_cast<double>(shape.ff_dim);
    double total = 0.0;
    for (double vc : per_layer_vision_counts) {
        const double t = vc + static_cast<double>(prompt_len);
        total += t * 8.0 * d * d + 4.0 * t * t * d + t * 4.0 * d * dff;
    }
    return total;
}

/// KV-cache bytes across layers: 2 (K and V) * (vision + prompt) * d * dtype.
inline double estimate_kv_bytes(const std::vector<double>& per_layer_vision_counts,
                                const ModelShape& shape) {
    shape.validate();
    double total = 0.0;
    for (double vc : per_layer_vision_counts) {
        total += 2.0 * (vc + static_cast<double>(shape.prompt_len)) *
                 static_cast<double>(shape.dim) * static_cast<double>(shape.kv_dtype_bytes);
    }
    return total;
}

struct InfeasibleSearchError : std::runtime_error {
    double min_retention;
    double max_retention;
    InfeasibleSearchError(double lo, double hi)
        : std::runtime_error("no feasible schedule: achievable retention range is [" +
                             std::to_string(lo) + ", " + std::to_string(hi) + "]"),
          min_retention(lo),
          max_retention(hi) {}
};

struct SearchOptions {
    double rho_grid_step = 0.05;
    double rho_grid_min = 0.10;
    double rho_grid_max = 0.50;
    double tie_band = 0.005;  // candidates within 0.5pp of target tie on lambda_1
};

/// Exhaustive search over (Lambda, P) for the schedule whose closed-form
/// retention lands closest to the target; among candidates within the tie
/// band, the one compressing latest (largest lambda_1) wins. Window counts
/// are filled with the halving sequence [2^(s-1) .. 1] clamped to the grid.
inline Schedule schedule_search(std::size_t num_layers, double target_retention, std::size_t steps,
                                std::size_t lambda_min, std::uint32_t max_window = 8,
                                const SearchOptions& opts = {}) {
    if (steps < 1) throw std::invalid_argument("schedule_search: steps must be >= 1");
    if (lambda_min < 1 || lambda_min >= num_layers) {
        throw std::invalid_argument("schedule_search: lambda_min out of range");
    }
    if (num_layers - lambda_min < steps) {
        throw std::invalid_argument("schedule_search: not enough layers for the step count");
    }

    std::vector<double> rho_grid;
    for (double r = opts.rho_grid_min; r <= opts.rho_grid_max + 1e-9; r += opts.rho_grid_step) {
        rho_grid.push_back(r);
    }

    struct Best {
        double diff = std::numeric_limits<double>::infinity();
        double retention = 0.0;
        std::vector<std::size_t> lambdas;
        std::vector<double> ratios;
    };
    Best best;
    Best best_in_band;  // largest lambda_1 among |retention - target| <= tie_band
    double lo = 1.0, hi = 0.0;

    std::vector<std::size_t> lambdas(steps);
    std::vector<double> ratios(steps);
    const double denom = static_cast<double>(num_layers);

    // Iterate strictly increasing lambda combinations.
    auto next_combo = [&](std::vector<std::size_t>& c) {
        for (std::size_t i = steps; i-- > 0;) {
            if (c[i] < num_layers - 1 - (steps - 1 - i)) {
                ++c[i];
                for (std::size_t j = i + 1; j < steps; ++j) c[j] = c[j - 1] + 1;
                return true;
            }
        }
        return false;
    };
    for (std::size_t i = 0; i < steps; ++i) lambdas[i] = lambda_min + i;

    do {
        std::vector<std::size_t> rho_idx(steps, 0);
        bool more = true;
        while (more) {
            for (std::size_t i = 0; i < steps; ++i) ratios[i] = rho_grid[rho_idx[i]];
            const double retention =
                token_layers_closed_form(1.0, num_layers, lambdas, ratios) / denom;
            lo = std::min(lo, retention);
            hi = std::max(hi, retention);
            const double diff = std::abs(retention - target_retention);
            if (diff < best.diff) {
                best = {diff, retention, lambdas, ratios};
            }
            if (diff <= opts.tie_band &&
                (best_in_band.lambdas.empty() || lambdas.front() > best_in_band.lambdas.front() ||
                 (lambdas.front() == best_in_band.lambdas.front() && diff < best_in_band.diff))) {
                best_in_band = {diff, retention, lambdas, ratios};
            }
            // advance rho indices
            more = false;
            for (std::size_t i = steps; i-- > 0;) {
                if (++rho_idx[i] < rho_grid.size()) {
                    more = true;
                    break;
                }
                rho_idx[i] = 0;
            }
        }
    } while (next_combo(lambdas));

    const Best& winner = best_in_band.lambdas.empty() ? best : best_in_band;
    if (target_retention < lo - opts.tie_band || target_retention > hi + opts.tie_band) {
        throw InfeasibleSearchError(lo, hi);
    }

    Schedule out;
    out.lambdas = winner.lambdas;
    out.ratios = winner.ratios;
    out.windows.resize(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const std::uint32_t w = 1u << (steps - 1 - i);
        out.windows[i] = std::min(w, max_window);
    }
    return out;
}

/// Assemble a cost report from a simulated trace.
inline CostReport build_cost_report(const PrefillTrace& trace, const Schedule& schedule,
                                    const ModelShape& shape, std::size_t vision_tokens) {
    CostReport r;
    r.per_layer_vision_tokens = trace.per_layer_vision_tokens;
    r.token_layers = std::accumulate(r.per_layer_vision_tokens.begin(),
                                     r.per_layer_vision_tokens.end(), 0.0);
    r.closed_form_token_layers = token_layers_closed_form(
        static_cast<double>(vision_tokens), shape.layers, schedule.lambdas, schedule.ratios);
    r.retention_ratio =
        r.closed_form_token_layers / (static_cast<double>(vision_tokens) * shape.layers);
    std::vector<double> counts(r.per_layer_vision_tokens.begin(), r.per_layer_vision_tokens.end());
    r.flops_estimate = estimate_flops(counts, shape, shape.prompt_len);
    r.kv_bytes_estimate = estimate_kv_bytes(counts, shape);
    r.comparison_ops = trace.comparison_ops;
    return r;
}

}  // namespace lkv
